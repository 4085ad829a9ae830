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

#include "mcep/dp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace mcep::dp {

TabularPolicy TabularPolicy::uniform(std::size_t s, std::size_t a) {
  TabularPolicy pi(s, a);
  std::fill(pi.probs.begin(), pi.probs.end(), 1.0 / static_cast<double>(a));
  return pi;
}

void TabularPolicy::validate() const {
  if (probs.size() != n_states * n_actions) throw ValidationError("policy shape mismatch");
  for (std::size_t s = 0; s < n_states; ++s) {
    double sum = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) {
      const double p = at(s, a);
      if (!(p >= 0.0)) {
        throw ValidationError("policy row " + std::to_string(s) + " has a negative entry");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw ValidationError("policy row " + std::to_string(s) + " sums to " + std::to_string(sum));
    }
  }
}

std::size_t TabularPolicy::sample(std::size_t s, Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t a = 0; a < n_actions; ++a) {
    const double p = at(s, a);
    if (p == 0.0) continue;
    last = a;
    acc += p;
    if (u < acc) return a;
  }
  return last;
}

namespace {

void check_shapes(const mdp::TabularMDP& mdp, const TabularPolicy& pi) {
  if (pi.n_states != mdp.n_states() || pi.n_actions != mdp.n_actions()) {
    throw ValidationError("policy shape does not match the MDP");
  }
}

// Sweep until gamma / (1 - gamma) * ||V_k+1 - V_k|| < tol / 2.
double stop_threshold(double gamma, double tol) {
  if (gamma == 0.0) return std::numeric_limits<double>::infinity();
  return 0.5 * tol * (1.0 - gamma) / gamma;
}

template <typename Backup>
ValueTable sweep_to_fixed_point(const mdp::TabularMDP& mdp, double tol, ValueTable v,
                                Backup backup) {
  const double threshold = stop_threshold(mdp.discount(), tol);
  std::vector<double> next(mdp.n_states(), 0.0);
  for (;;) {
    double delta = 0.0;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
      next[s] = mdp.terminal(s) ? 0.0 : backup(s, v.v);
      delta = std::max(delta, std::abs(next[s] - v.v[s]));
    }
    v.v.swap(next);
    if (delta < threshold) return v;
  }
}

double q_value(const mdp::TabularMDP& mdp, std::size_t s, std::size_t a,
               const std::vector<double>& v) {
  const auto row = mdp.transition_row(s, a);
  double expect = 0.0;
  for (std::size_t n = 0; n < row.size(); ++n) {
    if (row[n] != 0.0) expect += row[n] * v[n];
  }
  return mdp.reward(s, a) + mdp.discount() * expect;
}

}  // namespace

QTable lookahead(const mdp::TabularMDP& mdp, const ValueTable& v) {
  QTable q(mdp.n_states(), mdp.n_actions());
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      q.at(s, a) = mdp.terminal(s) ? 0.0 : q_value(mdp, s, a, v.v);
    }
  }
  return q;
}

Solution value_iteration(const mdp::TabularMDP& mdp, double tol, std::optional<ValueTable> init) {
  if (!(tol > 0.0)) throw ValidationError("value_iteration: tol must be positive");
  ValueTable v = init.value_or(ValueTable{std::vector<double>(mdp.n_states(), 0.0)});
  if (v.v.size() != mdp.n_states()) throw ValidationError("initial value table has wrong size");
  v = sweep_to_fixed_point(mdp, tol, std::move(v), [&](std::size_t s, const std::vector<double>& cur) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) best = std::max(best, q_value(mdp, s, a, cur));
    return best;
  });
  QTable q = lookahead(mdp, v);
  return {std::move(v), std::move(q)};
}

Solution exact_policy_evaluation(const mdp::TabularMDP& mdp, const TabularPolicy& pi, double tol) {
  if (!(tol > 0.0)) throw ValidationError("exact_policy_evaluation: tol must be positive");
  check_shapes(mdp, pi);
  pi.validate();
  ValueTable v{std::vector<double>(mdp.n_states(), 0.0)};
  v = sweep_to_fixed_point(mdp, tol, std::move(v), [&](std::size_t s, const std::vector<double>& cur) {
    double total = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double p = pi.at(s, a);
      if (p != 0.0) total += p * q_value(mdp, s, a, cur);
    }
    return total;
  });
  QTable q = lookahead(mdp, v);
  return {std::move(v), std::move(q)};
}

TabularPolicy greedy_policy(const QTable& q) {
  TabularPolicy pi(q.n_states, q.n_actions);
  for (std::size_t s = 0; s < q.n_states; ++s) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < q.n_actions; ++a) {
      if (q.at(s, a) > q.at(s, best)) best = a;
    }
    pi.at(s, best) = 1.0;
  }
  return pi;
}

double policy_return(const mdp::TabularMDP& mdp, const TabularPolicy& pi, double tol) {
  const auto sol = exact_policy_evaluation(mdp, pi, tol);
  double total = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s) total += mdp.start_dist()[s] * sol.values.v[s];
  return total;
}

double bellman_residual(const mdp::TabularMDP& mdp, const ValueTable& v) {
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    double best = 0.0;
    if (!mdp.terminal(s)) {
      best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < mdp.n_actions(); ++a) best = std::max(best, q_value(mdp, s, a, v.v));
    }
    worst = std::max(worst, std::abs(v.v[s] - best));
  }
  return worst;
}

double sup_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("sup_distance: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void write_values_csv(std::ostream& out, const ValueTable& v) {
  out.precision(17);
  out << "state,value\n";
  for (std::size_t s = 0; s < v.v.size(); ++s) out << s << ',' << v.v[s] << '\n';
}

namespace {
void write_matrix(std::ostream& out, std::size_t rows, std::size_t cols,
                  const std::vector<double>& data, const char* prefix) {
  out.precision(17);
  out << "state";
  for (std::size_t a = 0; a < cols; ++a) out << ',' << prefix << a;
  out << '\n';
  for (std::size_t s = 0; s < rows; ++s) {
    out << s;
    for (std::size_t a = 0; a < cols; ++a) out << ',' << data[s * cols + a];
    out << '\n';
  }
}
std::vector<double> read_matrix(std::istream& in, std::size_t& rows, std::size_t& cols) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(DataError::Kind::Truncated, "table CSV is empty");
  cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (cols == 0) throw DataError(DataError::Kind::Format, "table CSV header has no columns");
  std::vector<double> data;
  rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    if (cell != std::to_string(rows)) {
      throw DataError(DataError::Kind::Format, "table CSV row " + std::to_string(rows) +
                                                   " has state label '" + cell + "'");
    }
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        throw DataError(DataError::Kind::Format, "table CSV cell '" + cell + "' is not a number");
      }
      data.push_back(v);
      ++n;
    }
    if (n != cols) {
      throw DataError(DataError::Kind::Format,
                      "table CSV row " + std::to_string(rows) + " has the wrong width");
    }
    ++rows;
  }
  return data;
}
}  // namespace

void write_q_csv(std::ostream& out, const QTable& q) {
  write_matrix(out, q.n_states, q.n_actions, q.q, "q");
}

void write_policy_csv(std::ostream& out, const TabularPolicy& pi) {
  write_matrix(out, pi.n_states, pi.n_actions, pi.probs, "p");
}

QTable read_q_csv(std::istream& in) {
  QTable q;
  q.q = read_matrix(in, q.n_states, q.n_actions);
  return q;
}

TabularPolicy read_policy_csv(std::istream& in) {
  TabularPolicy pi;
  pi.probs = read_matrix(in, pi.n_states, pi.n_actions);
  try {
    pi.validate();
  } catch (const ValidationError& e) {
    throw DataError(DataError::Kind::Format, e.what());
  }
  return pi;
}

}  // namespace mcep::dp
