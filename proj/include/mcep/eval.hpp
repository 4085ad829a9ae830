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

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcep/algos.hpp"
#include "mcep/datasets.hpp"
#include "mcep/dp.hpp"
#include "mcep/mdp.hpp"

namespace mcep::eval {

enum class SelectionMode { None, Argmax, Softmax };
const char* to_string(SelectionMode m);
SelectionMode selection_mode_from_string(const std::string& s);

/// Inference-time action selection around the policy output.
struct SelectionConfig {
  SelectionMode mode = SelectionMode::None;
  double noise_std = 0.05;
  std::size_t n_samples = 50;
  double temperature = 1.0;

  void validate() const;
};

/// A policy ready for deployment: network, optional critics for candidate
/// scoring, and the observation normaliser it was trained with.
struct Agent {
  algos::Policy policy;
  std::optional<algos::CriticPair> critics;
  std::vector<double> state_mean;
  std::vector<double> state_std;

  static Agent target(const algos::TrainArtifacts& art);
  /// Throws ContractViolation when the run had no evaluation policy.
  static Agent evaluation(const algos::TrainArtifacts& art);
  static Agent from_checkpoints(const nn::Checkpoint& policy,
                                const std::optional<nn::Checkpoint>& q1 = std::nullopt,
                                const std::optional<nn::Checkpoint>& q2 = std::nullopt);

  /// Applies the normaliser to a batch of raw observations.
  nn::Matrix observe(const nn::Matrix& raw) const;
  nn::Matrix observe(std::span<const double> raw) const;
};

/// exp(score / temperature) normalised; invariant to shifting every score.
std::vector<double> softmax_probabilities(std::span<const double> scores, double temperature);

/// Index of the highest score (lowest index on ties), or a softmax draw.
std::size_t select_index(std::span<const double> scores, SelectionMode mode, double temperature,
                         Rng& rng);

/// Candidate set {pi(s) + noise_i} clipped to [-1, 1], scored by min(Q1, Q2).
std::vector<double> select_action(const Agent& agent, std::span<const double> observation,
                                  const SelectionConfig& cfg, Rng& rng);

struct EvalReport {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double std_error = 0.0;  ///< sample std / sqrt(episodes)
  std::optional<double> normalized_return;
  std::vector<double> returns;
};

/// Aggregates a list of episode returns.
EvalReport summarize(std::vector<double> returns);

/// Runs full episodes (termination or env horizon). Returns are
/// sum_t discount^t r_t; discount 1 gives the undiscounted return.
EvalReport evaluate(mdp::Environment& env, const data::ActionFn& policy, std::size_t episodes,
                    Rng& rng, double discount = 1.0);
EvalReport evaluate(mdp::Environment& env, const Agent& agent, std::size_t episodes,
                    const SelectionConfig& cfg, Rng& rng, double discount = 1.0);
/// Samples actions from a tabular policy over observation = state index.
data::ActionFn tabular_actor(const dp::TabularPolicy& pi);

/// 100 (raw - random) / (expert - random). Throws ValidationError unless expert > random.
double normalized_return(double raw, double random_score, double expert_score);

struct QDiffReport {
  std::vector<double> values;  ///< Q(s, pi(s)) - Q(s, a) per dataset row
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<std::pair<double, double>> quantiles;  ///< (level, value)
  std::vector<double> histogram_edges;
  std::vector<std::size_t> histogram_counts;
};

QDiffReport summarize_qdiff(std::vector<double> values, std::size_t bins = 20);
/// Neural form; raw dataset states are normalised with the agent's statistics.
/// Q is min(Q1, Q2) and pi(s) is the deterministic policy output.
QDiffReport q_diff_diagnostic(const Agent& agent, const data::Dataset& d);
/// Tabular form with Q(s, pi) = sum_a pi(a|s) Q(s, a).
QDiffReport q_diff_diagnostic(const dp::QTable& q, const dp::TabularPolicy& pi,
                              const data::Dataset& d);
std::string qdiff_json(const QDiffReport& r);
void write_qdiff_csv(std::ostream& out, const QDiffReport& r);

// ---------------------------------------------------------------------------
// Constraint-strength sweeps

struct SweepSpec {
  /// TrainConfig field to vary: alpha_tilde, alpha_e, lambda_tilde, lambda_e,
  /// kl_weight or kl_weight_e. Empty picks the target strength of the algorithm.
  std::string parameter;
  std::vector<double> grid;
  std::vector<std::uint64_t> seeds;
  std::size_t eval_episodes = 20;
  SelectionConfig selection;
  std::size_t threads = 1;
  /// Critic features for tabular runs; the one-hot map when empty.
  std::optional<algos::LinearFeatures> features;
};

struct SweepCell {
  double strength = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
  double return_target = 0.0;
  double return_eval = 0.0;  ///< NaN when the run had no evaluation policy
};

struct SweepReport {
  std::string parameter;
  std::vector<SweepCell> cells;  ///< ordered by (strength, seed)

  /// Largest strength such that no seed diverged at it or any smaller strength.
  std::optional<double> safe_edge() const;
  /// Smallest strength at which every seed diverged.
  std::optional<double> first_all_diverged() const;
  /// Largest strength where the evaluation policy's mean return beats the
  /// target policy's over non-diverged seeds.
  std::optional<double> improvement_edge() const;
  /// Once every seed diverges at some strength, every larger strength does too.
  bool monotone_frontier() const;

  void write_csv(std::ostream& out) const;
  std::string summary_json() const;
};

std::string default_sweep_parameter(algos::Algorithm a);
/// Writes `value` into the named strength field. Throws ValidationError on an unknown name.
void set_strength(algos::TrainConfig& cfg, const std::string& parameter, double value);

/// Trains and evaluates every (strength, seed) cell. Diverged cells are
/// recorded, never fatal. Tabular runs on a maze are scored by exact
/// discounted return; neural runs by rollouts in `env`.
SweepReport constraint_sweep(const algos::TrainConfig& base, const SweepSpec& spec,
                             const data::Dataset& dataset, const mdp::Environment& env);

}  // namespace mcep::eval
