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

#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mcep/common.hpp"

namespace mcep::mdp {

/// Explicit finite MDP. Tensors are stored flat, row-major:
/// transition[(s * A + a) * S + s'] and reward[s * A + a].
class TabularMDP {
 public:
  TabularMDP() = default;
  TabularMDP(std::size_t n_states, std::size_t n_actions, double discount);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double discount() const { return discount_; }
  void set_discount(double gamma);

  double& transition(std::size_t s, std::size_t a, std::size_t next) {
    return transition_[(s * n_actions_ + a) * n_states_ + next];
  }
  double transition(std::size_t s, std::size_t a, std::size_t next) const {
    return transition_[(s * n_actions_ + a) * n_states_ + next];
  }
  std::span<const double> transition_row(std::size_t s, std::size_t a) const {
    return {transition_.data() + (s * n_actions_ + a) * n_states_, n_states_};
  }
  double& reward(std::size_t s, std::size_t a) { return reward_[s * n_actions_ + a]; }
  double reward(std::size_t s, std::size_t a) const { return reward_[s * n_actions_ + a]; }

  bool terminal(std::size_t s) const { return terminal_[s] != 0; }
  void set_terminal(std::size_t s, bool t) { terminal_[s] = t ? 1 : 0; }

  std::vector<double>& start_dist() { return start_; }
  const std::vector<double>& start_dist() const { return start_; }

  const std::vector<double>& transitions() const { return transition_; }
  const std::vector<double>& rewards() const { return reward_; }

  /// Checks row-stochasticity, the start distribution and terminal self-loops.
  /// Throws ValidationError describing the first violation.
  void validate() const;

  bool operator==(const TabularMDP&) const = default;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  double discount_ = 0.95;
  std::vector<double> transition_;
  std::vector<double> reward_;
  std::vector<char> terminal_;
  std::vector<double> start_;
};

struct StepOutcome {
  std::size_t next_state = 0;
  double reward = 0.0;
  bool done = false;
};

/// Samples one transition. Throws ContractViolation on a terminal or
/// out-of-range state/action.
StepOutcome tabular_step(const TabularMDP& mdp, std::size_t s, std::size_t a, Rng& rng);

// ---------------------------------------------------------------------------
// Grid maze

enum MazeAction : std::size_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr std::size_t kMazeActions = 5;
const char* maze_action_name(std::size_t a);

/// ASCII map over {'#', '.', 'S', 'G'}.
struct GridMapSpec {
  std::vector<std::string> rows;
  double slip_prob = 0.25;
  double goal_reward = 10.0;

  /// Throws ValidationError naming the offending row.
  void validate() const;
};

/// Default 6x6 map: start lower-left, goal upper-left, a barrier row and an
/// interior wall block between them.
GridMapSpec default_maze_spec();

/// Reads one row per line; blank lines and '\r' are ignored.
GridMapSpec parse_grid_map(const std::string& text);
GridMapSpec load_grid_map(const std::string& path);

struct Cell {
  int row = 0;
  int col = 0;
};

struct Maze {
  TabularMDP mdp;
  GridMapSpec spec;
  std::vector<Cell> cells;  ///< state index -> grid cell (walls excluded)
  std::size_t start = 0;
  std::size_t goal = 0;
  int height = 0;
  int width = 0;

  /// State index of a cell or -1 for walls.
  long state_at(int row, int col) const;
};

Maze build_maze(const GridMapSpec& spec, double discount = 0.95);

// ---------------------------------------------------------------------------
// Point mass

struct PointMassParams {
  double dt = 0.1;
  int horizon = 200;
  double arena_halfwidth = 2.0;
  double goal_radius = 0.1;
  std::array<double, 2> goal{1.0, 1.0};
  /// Start positions are uniform over [start_low, start_high]^2, velocity zero.
  double start_low = -1.5;
  double start_high = -1.0;
};

struct PointMassState {
  std::array<double, 2> position{0.0, 0.0};
  std::array<double, 2> velocity{0.0, 0.0};
  bool operator==(const PointMassState&) const = default;
};

struct PointMassStep {
  PointMassState next;
  double reward = 0.0;
  bool reached_goal = false;
};

/// Pure dynamics. Throws ValidationError on a non-finite action.
PointMassStep pointmass_step(const PointMassParams& params, const PointMassState& state,
                             std::span<const double> action);

// ---------------------------------------------------------------------------
// Episodic environment interface used by collection and evaluation.

struct EnvStep {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminal = false;  ///< true termination; timeouts are reported by the caller
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t act_dim() const = 0;
  virtual bool discrete() const = 0;
  /// Number of discrete actions (0 for continuous envs).
  virtual std::size_t n_actions() const { return 0; }
  virtual int horizon() const = 0;
  /// Largest per-step |reward|; bounds the return by max_abs_reward / (1 - gamma).
  virtual double max_abs_reward() const = 0;

  virtual std::vector<double> reset(Rng& rng) = 0;
  virtual EnvStep step(std::span<const double> action, Rng& rng) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

/// Maze as an episodic env: observation = {state index}, action = {index}.
class MazeEnv final : public Environment {
 public:
  MazeEnv(std::shared_ptr<const Maze> maze, int horizon = 100);

  std::string id() const override { return "maze"; }
  std::size_t obs_dim() const override { return 1; }
  std::size_t act_dim() const override { return 1; }
  bool discrete() const override { return true; }
  std::size_t n_actions() const override { return maze_->mdp.n_actions(); }
  int horizon() const override { return horizon_; }
  double max_abs_reward() const override;

  std::vector<double> reset(Rng& rng) override;
  EnvStep step(std::span<const double> action, Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;

  const Maze& maze() const { return *maze_; }
  std::size_t state() const { return state_; }

 private:
  std::shared_ptr<const Maze> maze_;
  int horizon_;
  std::size_t state_ = 0;
};

/// Point mass as an episodic env: observation = (x, y, vx, vy).
class PointMassEnv final : public Environment {
 public:
  explicit PointMassEnv(PointMassParams params = {});

  std::string id() const override { return "pointmass"; }
  std::size_t obs_dim() const override { return 4; }
  std::size_t act_dim() const override { return 2; }
  bool discrete() const override { return false; }
  int horizon() const override { return params_.horizon; }
  double max_abs_reward() const override;

  std::vector<double> reset(Rng& rng) override;
  EnvStep step(std::span<const double> action, Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;

  const PointMassParams& params() const { return params_; }
  const PointMassState& state() const { return state_; }
  void set_state(const PointMassState& s) { state_ = s; }

 private:
  PointMassParams params_;
  PointMassState state_;
};

}  // namespace mcep::mdp
