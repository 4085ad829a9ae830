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

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mcep/mdp.hpp"

namespace mcep::dp {

/// State values; terminal states hold 0.
struct ValueTable {
  std::vector<double> v;
};

/// Action values, row-major [state][action].
struct QTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> q;

  QTable() = default;
  QTable(std::size_t s, std::size_t a, double fill = 0.0) : n_states(s), n_actions(a), q(s * a, fill) {}

  double& at(std::size_t s, std::size_t a) { return q[s * n_actions + a]; }
  double at(std::size_t s, std::size_t a) const { return q[s * n_actions + a]; }
};

/// Row-stochastic matrix [state][action].
struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;

  TabularPolicy() = default;
  TabularPolicy(std::size_t s, std::size_t a) : n_states(s), n_actions(a), probs(s * a, 0.0) {}

  static TabularPolicy uniform(std::size_t s, std::size_t a);

  double& at(std::size_t s, std::size_t a) { return probs[s * n_actions + a]; }
  double at(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }

  /// Throws ValidationError if a row is negative or does not sum to 1 within 1e-12.
  void validate() const;
  std::size_t sample(std::size_t s, Rng& rng) const;
};

struct Solution {
  ValueTable values;
  QTable q;
};

inline constexpr double kDefaultTol = 1e-10;

/// Q(s, a) = R(s, a) + gamma * sum_s' T(s'|s, a) V(s').
QTable lookahead(const mdp::TabularMDP& mdp, const ValueTable& v);

/// Synchronous Bellman optimality sweeps. Stops once the iterate is provably
/// within tol / 2 of V*, which also makes the Bellman residual < tol.
Solution value_iteration(const mdp::TabularMDP& mdp, double tol = kDefaultTol,
                         std::optional<ValueTable> init = std::nullopt);

/// Synchronous Bellman expectation sweeps for a fixed policy, same stopping rule.
Solution exact_policy_evaluation(const mdp::TabularMDP& mdp, const TabularPolicy& pi,
                                 double tol = kDefaultTol);

/// Deterministic argmax policy; ties go to the lowest action index.
TabularPolicy greedy_policy(const QTable& q);

/// sum_s p0(s) V_pi(s).
double policy_return(const mdp::TabularMDP& mdp, const TabularPolicy& pi,
                     double tol = kDefaultTol);

/// max_s |V(s) - max_a [R + gamma T V](s)|.
double bellman_residual(const mdp::TabularMDP& mdp, const ValueTable& v);

double sup_distance(const std::vector<double>& a, const std::vector<double>& b);

// CSV export: header then one line per state.
void write_values_csv(std::ostream& out, const ValueTable& v);
void write_q_csv(std::ostream& out, const QTable& q);
void write_policy_csv(std::ostream& out, const TabularPolicy& pi);
/// Inverse of the writers above. Throws DataError on malformed input.
QTable read_q_csv(std::istream& in);
TabularPolicy read_policy_csv(std::istream& in);

}  // namespace mcep::dp
