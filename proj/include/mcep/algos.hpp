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
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcep/datasets.hpp"
#include "mcep/dp.hpp"
#include "mcep/nn.hpp"

namespace mcep::algos {

enum class Algorithm { Td3bc, Awac, TabularKl };
enum class UpdateMode { Simultaneous, Afterward };
/// KlWeight: -sum pi Q + w KL with w = kl_weight(_e).
/// QWeight: -alpha sum pi Q + KL.
/// QNormalized: -(alpha / mean|Q|) sum pi Q + KL, mean over the batch.
enum class TabularStrength { KlWeight, QWeight, QNormalized };

const char* to_string(Algorithm a);
const char* to_string(UpdateMode m);
Algorithm algorithm_from_string(const std::string& s);
UpdateMode update_mode_from_string(const std::string& s);
const char* to_string(TabularStrength t);
TabularStrength tabular_strength_from_string(const std::string& s);

/// Loop constants and constraint strengths for every trainer. Defaults follow
/// the locomotion hyper-parameter table where it gives a value.
struct TrainConfig {
  Algorithm algorithm = Algorithm::Td3bc;
  bool mcep_enabled = true;

  double alpha_tilde = 2.5;   ///< TD3BC Q-normaliser coefficient for the target policy
  double alpha_e = 10.0;      ///< same for the evaluation policy
  double lambda_tilde = 1.0;  ///< AWAC advantage temperature for the target policy
  double lambda_e = 0.6;      ///< AWAC-MCEP likelihood weight for the evaluation policy
  double kl_weight = 1.0;     ///< tabular KL weight for the target policy
  double kl_weight_e = 0.1;   ///< tabular KL weight for the evaluation policy
  /// Tabular only: how alpha_tilde / alpha_e enter the actor loss.
  TabularStrength tabular_strength = TabularStrength::KlWeight;

  double eta = 0.005;
  double lr_critic = 3e-4;
  double lr_actor = 3e-4;
  double lr_actor_e = 3e-4;
  std::size_t batch_size = 256;  ///< 0 = full batch
  std::size_t steps = 100000;
  std::size_t policy_delay = 2;
  double smoothing_std = 0.2;
  double smoothing_clip = 0.5;
  UpdateMode update_mode = UpdateMode::Simultaneous;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{256, 256};
  nn::Activation activation = nn::Activation::Relu;
  double gamma = 0.99;
  bool normalize_states = true;

  double q_max = 0.0;  ///< divergence threshold on mean|Q|; 0 = 100x the return bound
  std::size_t divergence_window = 100;
  bool parallel_policy_updates = false;
  std::size_t checkpoint_interval = 0;  ///< 0 = no intermediate checkpoints

  /// Throws ValidationError listing the offending fields.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Networks

enum class PolicyKind { Deterministic, TanhGaussian };

/// Final-layer init multiplier of actors, so initial actions sit near zero.
inline constexpr double kActorFinalScale = 0.01;

struct Policy {
  PolicyKind kind = PolicyKind::Deterministic;
  nn::Mlp net;

  static Policy make(PolicyKind kind, std::size_t state_dim, std::size_t action_dim,
                     const std::vector<std::size_t>& hidden, nn::Activation act, Rng& rng,
                     const std::string& name);

  std::size_t action_dim() const;
  /// Deterministic inference: tanh of the output (or of the Gaussian mean).
  nn::Matrix act(const nn::Matrix& states) const;
  nn::Var act_var(const nn::Var& states, nn::GradMode mode) const;
  /// Only for TanhGaussian policies.
  nn::TanhGaussianHead head(const nn::Var& states, nn::GradMode mode) const;

  nn::HeadKind head_kind() const;
};

/// Twin critics and their EMA targets. Targets change only via ema_update.
struct CriticPair {
  nn::Mlp q1;
  nn::Mlp q2;
  nn::Mlp q1_target;
  nn::Mlp q2_target;

  static CriticPair make(std::size_t state_dim, std::size_t action_dim,
                         const std::vector<std::size_t>& hidden, nn::Activation act, Rng& rng);

  nn::Matrix q1_value(const nn::Matrix& s, const nn::Matrix& a) const;
  nn::Matrix min_q(const nn::Matrix& s, const nn::Matrix& a) const;
  nn::Matrix min_target_q(const nn::Matrix& s, const nn::Matrix& a) const;
  std::vector<nn::Parameter*> online_parameters();
  void soft_update(double eta);
};

/// Q(s, a) on the graph.
nn::Var critic_value(const nn::Mlp& q, const nn::Var& s, const nn::Var& a, nn::GradMode mode);

/// Scales a critic's output by c (> 0) by scaling its last layer.
nn::Mlp scaled_critic(const nn::Mlp& q, double c);

// ---------------------------------------------------------------------------
// Policy evaluation

struct Smoothing {
  double std = 0.0;  ///< 0 disables target-policy smoothing
  double clip = 0.0;
};

/// y = r + gamma (1 - done) min(Q1', Q2')(s', a'). For deterministic target
/// policies a' = clip(pi(s') + clip(noise, -c, c), -1, 1); for Gaussian ones a'
/// is a reparameterised sample. No gradient flows into y.
nn::Matrix critic_target(const data::Batch& batch, const Policy& target_policy,
                         const CriticPair& critics, double gamma, const Smoothing& smoothing,
                         Rng& rng);

/// Sum of both critics' mean squared errors on the graph.
nn::Var critic_loss(const CriticPair& critics, const data::Batch& batch, const nn::Matrix& targets,
                    nn::GradMode mode = nn::GradMode::Track);

/// One Adam step on both critics; returns the summed loss before the step.
double critic_update(CriticPair& critics, const data::Batch& batch, const nn::Matrix& targets,
                     double lr, nn::Adam& adam);

// ---------------------------------------------------------------------------
// Policy improvement

struct ActorLoss {
  nn::Var loss;
  double q_term = 0.0;   ///< TD3BC: lambda * mean Q(s, pi(s)); AWAC-MCEP: mean A(s, a_hat)
  double bc_term = 0.0;  ///< behaviour-cloning / likelihood part
  std::size_t flagged = 0;  ///< clipped weights or clamped atanh inputs
};

inline constexpr double kQNormEps = 1e-8;
inline constexpr double kAdvantageExpClip = 20.0;

/// lambda = alpha / max(mean_i |Q1(s_i, a_i)|, eps), computed on data actions.
double q_normalizer(const nn::Mlp& q1, const data::Batch& batch, double alpha);

/// -lambda mean Q1(s, pi(s)) + mean ||a - pi(s)||^2 with lambda held constant.
ActorLoss td3bc_actor_loss(const Policy& actor, const nn::Mlp& q1, const data::Batch& batch,
                           double alpha, nn::GradMode critic_mode = nn::GradMode::Frozen);

/// Advantage-weighted likelihood:
/// -mean[exp(min(A / lambda, 20)) log pi(a|s)], A = minQ(s, a) - minQ(s, mode(pi(s))),
/// with the advantage detached from the graph.
ActorLoss awac_actor_loss(const Policy& actor, const CriticPair& critics, const data::Batch& batch,
                          double lambda, nn::GradMode critic_mode = nn::GradMode::Frozen);

/// mean[-A(s, a_hat) - lambda_e log pi_e(a|s)] with a_hat = tanh(mu + sigma * noise)
/// reparameterised so the gradient reaches the policy through the critic input.
/// The baseline minQ(s, mode(pi_e(s))) is detached. `stop_sample_grad`
/// detaches a_hat too, leaving the likelihood-only gradient.
ActorLoss awac_mcep_loss(const Policy& actor, const CriticPair& critics, const data::Batch& batch,
                         double lambda_e, const nn::Matrix& noise, bool stop_sample_grad = false,
                         nn::GradMode critic_mode = nn::GradMode::Frozen);

/// Plain TD3 objective, -mean Q1(s, pi(s)); used for online data collection.
ActorLoss td3_actor_loss(const Policy& actor, const nn::Mlp& q1, const nn::Matrix& states);

double td3bc_actor_update(Policy& actor, const CriticPair& critics, const data::Batch& batch,
                          double alpha, double lr, nn::Adam& adam);
double awac_actor_update(Policy& actor, const CriticPair& critics, const data::Batch& batch,
                         double lambda, double lr, nn::Adam& adam);
double awac_mcep_update(Policy& actor, const CriticPair& critics, const data::Batch& batch,
                        double lambda_e, double lr, nn::Adam& adam, Rng& rng);

// ---------------------------------------------------------------------------
// Divergence monitor

/// True when any value is non-finite or the window mean exceeds q_max.
bool divergence_check(std::span<const double> mean_abs_q_window, double q_max);

/// 100 x max|r| / (1 - gamma) over the dataset's rewards (at least 1).
double default_q_max(const data::Dataset& d, double gamma);

// ---------------------------------------------------------------------------
// Training driver

struct MetricRow {
  std::size_t step = 0;
  double critic_loss = 0.0;
  double actor_loss_target = 0.0;
  double actor_loss_eval = 0.0;
  double mean_abs_q = 0.0;
  bool diverged = false;
};

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& log);

struct TrainArtifacts {
  Policy target_policy;
  std::optional<Policy> eval_policy;
  CriticPair critics;
  std::vector<MetricRow> log;
  bool diverged = false;
  std::string divergence_reason;
  std::vector<double> state_mean;  ///< input normaliser; empty when unused
  std::vector<double> state_std;

  /// Checkpoint carrying this run's input normaliser.
  nn::Checkpoint policy_checkpoint(const Policy& p) const;
  nn::Checkpoint critic_checkpoint(const nn::Mlp& q) const;
};

using CheckpointHook = std::function<void(std::size_t step, const TrainArtifacts&)>;

/// Actor-critic training with an optional mildly constrained evaluation policy.
/// The evaluation policy reads the critic but never feeds critic targets, and
/// draws from its own random stream, so enabling it leaves the critic and
/// target-policy trajectories unchanged.
TrainArtifacts train(const TrainConfig& config, const data::Dataset& dataset,
                     const CheckpointHook& on_checkpoint = {});

// ---------------------------------------------------------------------------
// Tabular actor-critic

/// Per-state softmax logits.
struct TabularActor {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> logits;

  TabularActor() = default;
  TabularActor(std::size_t s, std::size_t a) : n_states(s), n_actions(a), logits(s * a, 0.0) {}
  dp::TabularPolicy policy() const;
};

/// Visit-count estimate of the behaviour policy with +1 Laplace smoothing.
dp::TabularPolicy estimate_behavior(const data::Dataset& d, std::size_t n_states,
                                    std::size_t n_actions);

/// One gradient step on the logits of each listed state for
/// -q_scale * sum_a pi(a|s) Q(s, a) + w KL(pi_beta(.|s) || pi(.|s)).
/// Returns the mean loss over the listed states before the step.
double tabular_kl_actor_update(TabularActor& actor, const dp::QTable& q,
                               const dp::TabularPolicy& behavior, double w, double lr,
                               std::span<const std::size_t> states, double q_scale = 1.0);

/// Loss of a single state, used by gradient tests.
double tabular_kl_state_loss(const TabularActor& actor, const dp::QTable& q,
                             const dp::TabularPolicy& behavior, double w, std::size_t s,
                             double q_scale = 1.0);

/// Sparse linear critic Q(s, a) = sum_k theta_k phi_k(s, a).
struct LinearFeatures {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t n_params = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> phi;  ///< indexed s * A + a

  /// One parameter per (s, a).
  static LinearFeatures tabular(std::size_t n_states, std::size_t n_actions);
  const std::vector<std::pair<std::size_t, double>>& at(std::size_t s, std::size_t a) const {
    return phi[s * n_actions + a];
  }
  double value(std::span<const double> theta, std::size_t s, std::size_t a) const;
  dp::QTable q_table(std::span<const double> theta) const;
};

struct TabularTrainResult {
  dp::TabularPolicy target_policy;
  std::optional<dp::TabularPolicy> eval_policy;
  dp::QTable q;
  std::vector<double> theta;
  dp::TabularPolicy behavior;
  std::vector<MetricRow> log;
  bool diverged = false;
  std::string divergence_reason;
};

/// Tabular counterpart of `train`: semi-gradient TD on a linear critic with a
/// per-feature normalised step, EMA target parameters, softmax actors.
TabularTrainResult train_tabular(const TrainConfig& config, const data::Dataset& dataset,
                                 std::size_t n_states, std::size_t n_actions,
                                 const std::optional<LinearFeatures>& features = std::nullopt);

/// Empirical MDP of a tabular dataset: visited (s, a) pairs get their observed
/// next-state frequencies and mean reward; unvisited pairs and terminal
/// next-states lead to an extra absorbing zero-reward state (index n_states).
mdp::TabularMDP empirical_mdp(const data::Dataset& d, std::size_t n_states, std::size_t n_actions,
                              double gamma);

/// Maze dataset and critic features on which unconstrained bootstrapping
/// blows up. Inside `region` only `kept_action` transitions survive (the cut
/// trajectories end as truncations), and the critic ties every action of a
/// region state to one parameter: phi(s, kept) = 1, phi(s, other) = 1 + delta.
/// A policy that moves mass off the data action then bootstraps the kept
/// action from a value inflated by (1 + delta), which grows without bound once
/// gamma (1 + delta (1 - pi(kept|s))) > 1.
struct OverBootstrapInstance {
  data::Dataset dataset;
  LinearFeatures features;
  std::vector<std::size_t> region;
};

OverBootstrapInstance over_bootstrap_instance(const mdp::Maze& maze, const data::Dataset& d,
                                              const std::vector<std::size_t>& region, double delta,
                                              std::size_t kept_action = mdp::kStay);

inline constexpr double kOverBootstrapDelta = 0.07;

/// The `count` open states farthest from the goal in Manhattan distance,
/// ties broken towards the lower state index.
std::vector<std::size_t> default_overbootstrap_region(const mdp::Maze& maze,
                                                      std::size_t count = 2);

// ---------------------------------------------------------------------------
// Online TD3, used to build the medium / expert data recipes.

struct OnlineTd3Config {
  std::size_t steps = 30000;
  std::size_t start_steps = 2000;
  double exploration_std = 0.1;
  std::size_t batch_size = 256;
  std::vector<std::size_t> hidden{64, 64};
  double lr = 3e-4;
  double gamma = 0.99;
  double eta = 0.005;
  std::size_t policy_delay = 2;
  std::size_t snapshot_interval = 1000;
  std::uint64_t seed = 0;
};

struct OnlineTd3Result {
  std::vector<std::pair<std::size_t, Policy>> snapshots;  ///< (env step, actor)
  data::Dataset replay;
};

OnlineTd3Result train_online_td3(mdp::Environment& env, const OnlineTd3Config& config);

}  // namespace mcep::algos
