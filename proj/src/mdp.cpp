// Copyright 2026 The MCEP Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mcep/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mcep {

const char* to_string(DataError::Kind kind) {
  switch (kind) {
    case DataError::Kind::Io: return "io";
    case DataError::Kind::BadMagic: return "bad_magic";
    case DataError::Kind::VersionMismatch: return "version_mismatch";
    case DataError::Kind::Truncated: return "truncated";
    case DataError::Kind::Checksum: return "checksum";
    case DataError::Kind::Format: return "format";
  }
  return "unknown";
}

}  // namespace mcep

namespace mcep::mdp {

TabularMDP::TabularMDP(std::size_t n_states, std::size_t n_actions, double discount)
    : n_states_(n_states),
      n_actions_(n_actions),
      discount_(discount),
      transition_(n_states * n_actions * n_states, 0.0),
      reward_(n_states * n_actions, 0.0),
      terminal_(n_states, 0),
      start_(n_states, 0.0) {
  set_discount(discount);
}

void TabularMDP::set_discount(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ValidationError("discount must lie in [0, 1), got " + std::to_string(gamma));
  }
  discount_ = gamma;
}

void TabularMDP::validate() const {
  constexpr double kTol = 1e-12;
  for (std::size_t s = 0; s < n_states_; ++s) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      auto row = transition_row(s, a);
      double sum = 0.0;
      for (double p : row) {
        if (p < 0.0 || !std::isfinite(p)) {
          throw ValidationError("negative or non-finite probability in transition[" +
                                std::to_string(s) + "][" + std::to_string(a) + "]");
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kTol) {
        throw ValidationError("transition[" + std::to_string(s) + "][" + std::to_string(a) +
                              "] sums to " + std::to_string(sum));
      }
      if (!std::isfinite(reward(s, a))) {
        throw ValidationError("non-finite reward at state " + std::to_string(s));
      }
      if (terminal(s) && (transition(s, a, s) != 1.0 || reward(s, a) != 0.0)) {
        throw ValidationError("terminal state " + std::to_string(s) +
                              " must self-loop with reward 0");
      }
    }
  }
  const double start_sum = std::accumulate(start_.begin(), start_.end(), 0.0);
  if (std::abs(start_sum - 1.0) > kTol) {
    throw ValidationError("start distribution sums to " + std::to_string(start_sum));
  }
}

StepOutcome tabular_step(const TabularMDP& mdp, std::size_t s, std::size_t a, Rng& rng) {
  if (s >= mdp.n_states() || a >= mdp.n_actions()) {
    throw ContractViolation("state or action index out of range");
  }
  if (mdp.terminal(s)) {
    throw ContractViolation("tabular_step called on terminal state " + std::to_string(s));
  }
  auto row = mdp.transition_row(s, a);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t next = row.size() - 1;
  // Skip trailing zero-probability entries so rounding never selects them.
  while (next > 0 && row[next] == 0.0) --next;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] == 0.0) continue;
    acc += row[i];
    if (u < acc) {
      next = i;
      break;
    }
  }
  return {next, mdp.reward(s, a), mdp.terminal(next)};
}

// ---------------------------------------------------------------------------

const char* maze_action_name(std::size_t a) {
  static constexpr const char* kNames[] = {"up", "down", "left", "right", "stay"};
  return a < kMazeActions ? kNames[a] : "?";
}

void GridMapSpec::validate() const {
  if (rows.empty()) throw ValidationError("maze map has no rows");
  const std::size_t width = rows.front().size();
  int starts = 0;
  int goals = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width) {
      throw ValidationError("maze row " + std::to_string(r) + " has length " +
                            std::to_string(rows[r].size()) + ", expected " +
                            std::to_string(width));
    }
    for (char c : rows[r]) {
      switch (c) {
        case 'S': ++starts; break;
        case 'G': ++goals; break;
        case '#':
        case '.': break;
        default:
          throw ValidationError("maze row " + std::to_string(r) + " contains invalid cell '" +
                                std::string(1, c) + "'");
      }
    }
  }
  if (width == 0) throw ValidationError("maze row 0 is empty");
  if (starts != 1) {
    throw ValidationError("maze must contain exactly one 'S', found " + std::to_string(starts));
  }
  if (goals != 1) {
    throw ValidationError("maze must contain exactly one 'G', found " + std::to_string(goals));
  }
  if (!(slip_prob >= 0.0 && slip_prob <= 1.0)) {
    throw ValidationError("slip_prob must lie in [0, 1]");
  }
  if (!std::isfinite(goal_reward)) throw ValidationError("goal_reward must be finite");
}

GridMapSpec default_maze_spec() {
  GridMapSpec spec;
  spec.rows = {
      "G.....",
      "####..",
      "......",
      ".##...",
      ".##...",
      "S.....",
  };
  return spec;
}

GridMapSpec parse_grid_map(const std::string& text) {
  GridMapSpec spec;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line.erase(std::remove(line.begin(), line.end(), '\r'), line.end());
    if (line.empty()) continue;
    spec.rows.push_back(line);
  }
  spec.validate();
  return spec;
}

GridMapSpec load_grid_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open maze map '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_grid_map(buffer.str());
}

long Maze::state_at(int row, int col) const {
  if (row < 0 || col < 0 || row >= height || col >= width) return -1;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].row == row && cells[i].col == col) return static_cast<long>(i);
  }
  return -1;
}

Maze build_maze(const GridMapSpec& spec, double discount) {
  spec.validate();
  Maze maze;
  maze.spec = spec;
  maze.height = static_cast<int>(spec.rows.size());
  maze.width = static_cast<int>(spec.rows.front().size());

  std::vector<long> index(static_cast<std::size_t>(maze.height * maze.width), -1);
  for (int r = 0; r < maze.height; ++r) {
    for (int c = 0; c < maze.width; ++c) {
      const char cell = spec.rows[r][c];
      if (cell == '#') continue;
      index[r * maze.width + c] = static_cast<long>(maze.cells.size());
      if (cell == 'S') maze.start = maze.cells.size();
      if (cell == 'G') maze.goal = maze.cells.size();
      maze.cells.push_back({r, c});
    }
  }

  const std::size_t n = maze.cells.size();
  maze.mdp = TabularMDP(n, kMazeActions, discount);

  auto move = [&](std::size_t s, std::size_t a) -> std::size_t {
    static constexpr int kDr[] = {-1, 1, 0, 0, 0};
    static constexpr int kDc[] = {0, 0, -1, 1, 0};
    const int r = maze.cells[s].row + kDr[a];
    const int c = maze.cells[s].col + kDc[a];
    if (r < 0 || c < 0 || r >= maze.height || c >= maze.width) return s;
    const long t = index[r * maze.width + c];
    return t < 0 ? s : static_cast<std::size_t>(t);
  };

  const double slip_each = spec.slip_prob / static_cast<double>(kMazeActions);
  for (std::size_t s = 0; s < n; ++s) {
    if (s == maze.goal) {
      maze.mdp.set_terminal(s, true);
      for (std::size_t a = 0; a < kMazeActions; ++a) maze.mdp.transition(s, a, s) = 1.0;
      continue;
    }
    for (std::size_t a = 0; a < kMazeActions; ++a) {
      for (std::size_t executed = 0; executed < kMazeActions; ++executed) {
        const double p = slip_each + (executed == a ? 1.0 - spec.slip_prob : 0.0);
        if (p == 0.0) continue;
        maze.mdp.transition(s, a, move(s, executed)) += p;
      }
      maze.mdp.reward(s, a) = spec.goal_reward * maze.mdp.transition(s, a, maze.goal);
    }
  }
  maze.mdp.start_dist()[maze.start] = 1.0;
  maze.mdp.validate();
  return maze;
}

// ---------------------------------------------------------------------------

PointMassStep pointmass_step(const PointMassParams& params, const PointMassState& state,
                             std::span<const double> action) {
  if (action.size() != 2) throw ValidationError("point-mass action must have 2 components");
  if (!std::isfinite(action[0]) || !std::isfinite(action[1])) {
    throw ValidationError("point-mass action is not finite");
  }
  PointMassStep out;
  double action_sq = 0.0;
  double dist_sq = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double a = std::clamp(action[i], -1.0, 1.0);
    action_sq += a * a;
    out.next.velocity[i] = std::clamp(state.velocity[i] + params.dt * a, -1.0, 1.0);
    out.next.position[i] = std::clamp(state.position[i] + params.dt * out.next.velocity[i],
                                      -params.arena_halfwidth, params.arena_halfwidth);
    const double d = out.next.position[i] - params.goal[i];
    dist_sq += d * d;
  }
  const double dist = std::sqrt(dist_sq);
  out.reward = -dist - 0.01 * action_sq;
  out.reached_goal = dist < params.goal_radius;
  return out;
}

// ---------------------------------------------------------------------------

MazeEnv::MazeEnv(std::shared_ptr<const Maze> maze, int horizon)
    : maze_(std::move(maze)), horizon_(horizon) {
  if (!maze_) throw ValidationError("MazeEnv needs a maze");
  if (horizon_ < 1) throw ValidationError("horizon must be >= 1");
}

double MazeEnv::max_abs_reward() const { return std::abs(maze_->spec.goal_reward); }

std::vector<double> MazeEnv::reset(Rng& rng) {
  const auto& p0 = maze_->mdp.start_dist();
  const double u = rng.uniform();
  double acc = 0.0;
  state_ = maze_->start;
  for (std::size_t s = 0; s < p0.size(); ++s) {
    if (p0[s] == 0.0) continue;
    acc += p0[s];
    state_ = s;
    if (u < acc) break;
  }
  return {static_cast<double>(state_)};
}

EnvStep MazeEnv::step(std::span<const double> action, Rng& rng) {
  if (action.size() != 1) throw ValidationError("maze action must be a single index");
  const double a = action[0];
  if (!(a >= 0.0 && a < static_cast<double>(maze_->mdp.n_actions()))) {
    throw ValidationError("maze action index out of range");
  }
  const auto out = tabular_step(maze_->mdp, state_, static_cast<std::size_t>(a), rng);
  state_ = out.next_state;
  return {{static_cast<double>(state_)}, out.reward, out.done};
}

std::unique_ptr<Environment> MazeEnv::clone() const { return std::make_unique<MazeEnv>(*this); }

PointMassEnv::PointMassEnv(PointMassParams params) : params_(params) {
  if (params_.horizon < 1) throw ValidationError("horizon must be >= 1");
  if (!(params_.dt > 0.0)) throw ValidationError("dt must be positive");
}

double PointMassEnv::max_abs_reward() const {
  // Farthest corner-to-goal distance plus the full action penalty.
  double far = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double d = params_.arena_halfwidth + std::abs(params_.goal[i]);
    far += d * d;
  }
  return std::sqrt(far) + 0.02;
}

std::vector<double> PointMassEnv::reset(Rng& rng) {
  state_ = {};
  for (int i = 0; i < 2; ++i) state_.position[i] = rng.uniform(params_.start_low, params_.start_high);
  return {state_.position[0], state_.position[1], 0.0, 0.0};
}

EnvStep PointMassEnv::step(std::span<const double> action, Rng& /*rng*/) {
  const auto out = pointmass_step(params_, state_, action);
  state_ = out.next;
  return {{state_.position[0], state_.position[1], state_.velocity[0], state_.velocity[1]},
          out.reward,
          out.reached_goal};
}

std::unique_ptr<Environment> PointMassEnv::clone() const {
  return std::make_unique<PointMassEnv>(*this);
}

}  // namespace mcep::mdp
