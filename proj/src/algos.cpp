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

#include "mcep/algos.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <ostream>
#include <set>
#include <sstream>

namespace mcep::algos {

using nn::GradMode;
using nn::Matrix;
using nn::Var;

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Td3bc: return "td3bc";
    case Algorithm::Awac: return "awac";
    case Algorithm::TabularKl: return "tabular_kl";
  }
  return "?";
}

const char* to_string(UpdateMode m) {
  return m == UpdateMode::Simultaneous ? "simultaneous" : "afterward";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "td3bc") return Algorithm::Td3bc;
  if (s == "awac") return Algorithm::Awac;
  if (s == "tabular_kl") return Algorithm::TabularKl;
  throw ValidationError("unknown algorithm '" + s + "' (expected td3bc, awac or tabular_kl)");
}

UpdateMode update_mode_from_string(const std::string& s) {
  if (s == "simultaneous") return UpdateMode::Simultaneous;
  if (s == "afterward") return UpdateMode::Afterward;
  throw ValidationError("unknown update mode '" + s + "' (expected simultaneous or afterward)");
}

const char* to_string(TabularStrength t) {
  switch (t) {
    case TabularStrength::KlWeight: return "kl_weight";
    case TabularStrength::QWeight: return "q_weight";
    case TabularStrength::QNormalized: return "q_normalized";
  }
  return "?";
}

TabularStrength tabular_strength_from_string(const std::string& s) {
  if (s == "kl_weight") return TabularStrength::KlWeight;
  if (s == "q_weight") return TabularStrength::QWeight;
  if (s == "q_normalized") return TabularStrength::QNormalized;
  throw ValidationError("unknown tabular strength '" + s +
                        "' (expected kl_weight, q_weight or q_normalized)");
}

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) bad.emplace_back(name);
  };
  positive(alpha_tilde, "alpha_tilde");
  positive(alpha_e, "alpha_e");
  positive(lambda_tilde, "lambda_tilde");
  positive(lambda_e, "lambda_e");
  if (!(kl_weight >= 0.0)) bad.emplace_back("kl_weight");
  if (!(kl_weight_e >= 0.0)) bad.emplace_back("kl_weight_e");
  if (!(eta > 0.0 && eta <= 1.0)) bad.emplace_back("eta");
  if (!(lr_critic >= 0.0)) bad.emplace_back("lr_critic");
  if (!(lr_actor >= 0.0)) bad.emplace_back("lr_actor");
  if (!(lr_actor_e >= 0.0)) bad.emplace_back("lr_actor_e");
  if (policy_delay == 0) bad.emplace_back("policy_delay");
  if (!(smoothing_std >= 0.0)) bad.emplace_back("smoothing_std");
  if (!(smoothing_clip >= 0.0)) bad.emplace_back("smoothing_clip");
  if (!(gamma >= 0.0 && gamma < 1.0)) bad.emplace_back("gamma");
  if (!(q_max >= 0.0)) bad.emplace_back("q_max");
  if (divergence_window == 0) bad.emplace_back("divergence_window");
  if (algorithm != Algorithm::TabularKl && hidden.empty()) bad.emplace_back("hidden");
  for (std::size_t h : hidden) {
    if (h == 0) {
      bad.emplace_back("hidden");
      break;
    }
  }
  if (!bad.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& b : bad) msg += " " + b;
    throw ValidationError(msg);
  }
}

// ---------------------------------------------------------------------------

Policy Policy::make(PolicyKind kind, std::size_t state_dim, std::size_t action_dim,
                    const std::vector<std::size_t>& hidden, nn::Activation act, Rng& rng,
                    const std::string& name) {
  const std::size_t out = kind == PolicyKind::Deterministic ? action_dim : 2 * action_dim;
  return Policy{kind, nn::Mlp(state_dim, hidden, out, act, rng, kActorFinalScale, name)};
}

std::size_t Policy::action_dim() const {
  return kind == PolicyKind::Deterministic ? net.out_dim() : net.out_dim() / 2;
}

Matrix Policy::act(const Matrix& states) const {
  Matrix out = net.predict(states);
  if (kind == PolicyKind::TanhGaussian) {
    Matrix mean = out.leftCols(static_cast<Eigen::Index>(action_dim()));
    out = mean;
  }
  return out.array().tanh().matrix();
}

Var Policy::act_var(const Var& states, GradMode mode) const {
  if (kind == PolicyKind::Deterministic) return nn::deterministic_action(net, states, mode);
  return head(states, mode).mode();
}

nn::TanhGaussianHead Policy::head(const Var& states, GradMode mode) const {
  if (kind != PolicyKind::TanhGaussian) {
    throw ContractViolation("a Gaussian head was requested from a deterministic policy");
  }
  return nn::TanhGaussianHead::from_network(net, states, mode);
}

nn::HeadKind Policy::head_kind() const {
  return kind == PolicyKind::Deterministic ? nn::HeadKind::Deterministic
                                           : nn::HeadKind::TanhGaussian;
}

CriticPair CriticPair::make(std::size_t state_dim, std::size_t action_dim,
                            const std::vector<std::size_t>& hidden, nn::Activation act, Rng& rng) {
  CriticPair c;
  c.q1 = nn::Mlp(state_dim + action_dim, hidden, 1, act, rng, 1.0, "q1");
  c.q2 = nn::Mlp(state_dim + action_dim, hidden, 1, act, rng, 1.0, "q2");
  c.q1_target = c.q1;
  c.q2_target = c.q2;
  return c;
}

namespace {

Matrix joined(const Matrix& s, const Matrix& a) {
  Matrix x(s.rows(), s.cols() + a.cols());
  x << s, a;
  return x;
}

}  // namespace

Matrix CriticPair::q1_value(const Matrix& s, const Matrix& a) const {
  return q1.predict(joined(s, a));
}

Matrix CriticPair::min_q(const Matrix& s, const Matrix& a) const {
  const Matrix x = joined(s, a);
  return q1.predict(x).cwiseMin(q2.predict(x));
}

Matrix CriticPair::min_target_q(const Matrix& s, const Matrix& a) const {
  const Matrix x = joined(s, a);
  return q1_target.predict(x).cwiseMin(q2_target.predict(x));
}

std::vector<nn::Parameter*> CriticPair::online_parameters() {
  auto p = q1.parameters();
  for (auto* x : q2.parameters()) p.push_back(x);
  return p;
}

void CriticPair::soft_update(double eta) {
  nn::ema_update(q1_target, q1, eta);
  nn::ema_update(q2_target, q2, eta);
}

Var critic_value(const nn::Mlp& q, const Var& s, const Var& a, GradMode mode) {
  return q.forward(nn::concat_cols(s, a), mode);
}

nn::Mlp scaled_critic(const nn::Mlp& q, double c) {
  if (!(c > 0.0)) throw ValidationError("critic scale must be positive");
  nn::Mlp out = q;
  auto& last = out.layers().back();
  last.weight.mutable_value() *= c;
  last.bias.mutable_value() *= c;
  return out;
}

// ---------------------------------------------------------------------------

Matrix critic_target(const data::Batch& batch, const Policy& target_policy,
                     const CriticPair& critics, double gamma, const Smoothing& smoothing,
                     Rng& rng) {
  Matrix next_a;
  if (target_policy.kind == PolicyKind::Deterministic) {
    next_a = target_policy.act(batch.next_states);
    if (smoothing.std > 0.0) {
      for (Eigen::Index i = 0; i < next_a.size(); ++i) {
        const double eps =
            std::clamp(smoothing.std * rng.normal(), -smoothing.clip, smoothing.clip);
        next_a.data()[i] = std::clamp(next_a.data()[i] + eps, -1.0, 1.0);
      }
    }
  } else {
    const auto d = static_cast<Eigen::Index>(target_policy.action_dim());
    const Matrix out = target_policy.net.predict(batch.next_states);
    const Matrix noise = nn::standard_normal(out.rows(), d, rng);
    const Matrix log_std = out.rightCols(d).cwiseMax(nn::kLogStdMin).cwiseMin(nn::kLogStdMax);
    next_a = (out.leftCols(d).array() + log_std.array().exp() * noise.array()).tanh().matrix();
  }
  const Matrix next_q = critics.min_target_q(batch.next_states, next_a);
  return (batch.rewards.array() +
          gamma * (1.0 - batch.dones.array()) * next_q.array())
      .matrix();
}

namespace {

struct CriticEval {
  Var loss;
  double mean_abs_q = 0.0;
};

CriticEval critic_eval(const CriticPair& critics, const data::Batch& batch, const Matrix& targets,
                       GradMode mode) {
  const Var s = Var::constant(batch.states);
  const Var a = Var::constant(batch.actions);
  const Var y = Var::constant(targets);
  const Var q1 = critic_value(critics.q1, s, a, mode);
  const Var q2 = critic_value(critics.q2, s, a, mode);
  CriticEval out;
  out.loss = nn::mean(nn::square(q1 - y)) + nn::mean(nn::square(q2 - y));
  out.mean_abs_q = q1.value().cwiseAbs().mean();
  return out;
}

double critic_step(CriticPair& critics, const data::Batch& batch, const Matrix& targets, double lr,
                   nn::Adam& adam, double* mean_abs_q) {
  critics.q1.zero_grad();
  critics.q2.zero_grad();
  CriticEval ev = critic_eval(critics, batch, targets, GradMode::Track);
  nn::backward(ev.loss);
  const auto params = critics.online_parameters();
  adam.step(params, lr);
  if (mean_abs_q) *mean_abs_q = ev.mean_abs_q;
  return ev.loss.item();
}

}  // namespace

Var critic_loss(const CriticPair& critics, const data::Batch& batch, const Matrix& targets,
                GradMode mode) {
  return critic_eval(critics, batch, targets, mode).loss;
}

double critic_update(CriticPair& critics, const data::Batch& batch, const Matrix& targets,
                     double lr, nn::Adam& adam) {
  return critic_step(critics, batch, targets, lr, adam, nullptr);
}

// ---------------------------------------------------------------------------

double q_normalizer(const nn::Mlp& q1, const data::Batch& batch, double alpha) {
  const double m = q1.predict(joined(batch.states, batch.actions)).cwiseAbs().mean();
  return alpha / std::max(m, kQNormEps);
}

ActorLoss td3bc_actor_loss(const Policy& actor, const nn::Mlp& q1, const data::Batch& batch,
                           double alpha, GradMode critic_mode) {
  if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
  const Var s = Var::constant(batch.states);
  const Var pi = actor.act_var(s, GradMode::Track);
  const Var q = critic_value(q1, s, pi, critic_mode);
  const double lambda = q_normalizer(q1, batch, alpha);
  const Var q_term = lambda * nn::mean(q);
  const Var bc = nn::mean(nn::row_sum(nn::square(pi - Var::constant(batch.actions))));
  ActorLoss out;
  out.loss = bc - q_term;
  out.q_term = q_term.item();
  out.bc_term = bc.item();
  return out;
}

namespace {

Var min_critic(const CriticPair& c, const Var& s, const Var& a, GradMode mode) {
  return nn::minimum(critic_value(c.q1, s, a, mode), critic_value(c.q2, s, a, mode));
}

}  // namespace

ActorLoss awac_actor_loss(const Policy& actor, const CriticPair& critics, const data::Batch& batch,
                          double lambda, GradMode critic_mode) {
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  const Var s = Var::constant(batch.states);
  const auto head = actor.head(s, GradMode::Track);
  ActorLoss out;
  const Var logp = head.log_prob(batch.actions, &out.flagged);

  const Var q_data = min_critic(critics, s, Var::constant(batch.actions), critic_mode);
  const Var q_pi = min_critic(critics, s, nn::detach(head.mode()), critic_mode);
  const Matrix adv = nn::detach(q_data - q_pi).value();

  Matrix w(adv.rows(), 1);
  for (Eigen::Index i = 0; i < adv.rows(); ++i) {
    double e = std::min(adv(i, 0) / lambda, kAdvantageExpClip);
    if (std::isnan(e)) {
      e = -std::numeric_limits<double>::infinity();
      ++out.flagged;
    }
    w(i, 0) = std::exp(e);
  }
  out.loss = -nn::mean(Var::constant(w) * logp);
  out.bc_term = out.loss.item();
  out.q_term = adv.mean();
  return out;
}

ActorLoss awac_mcep_loss(const Policy& actor, const CriticPair& critics, const data::Batch& batch,
                         double lambda_e, const Matrix& noise, bool stop_sample_grad,
                         GradMode critic_mode) {
  if (!(lambda_e > 0.0)) throw ValidationError("lambda_e must be positive");
  const Var s = Var::constant(batch.states);
  const auto head = actor.head(s, GradMode::Track);
  Var a_hat = head.sample(noise).first;
  if (stop_sample_grad) a_hat = nn::detach(a_hat);
  const Var baseline = nn::detach(min_critic(critics, s, nn::detach(head.mode()), critic_mode));
  const Var adv = min_critic(critics, s, a_hat, critic_mode) - baseline;
  ActorLoss out;
  const Var logp = head.log_prob(batch.actions, &out.flagged);
  const Var adv_term = nn::mean(adv);
  const Var lik = nn::mean(logp);
  out.loss = -adv_term - lambda_e * lik;
  out.q_term = adv_term.item();
  out.bc_term = -lik.item();
  return out;
}

ActorLoss td3_actor_loss(const Policy& actor, const nn::Mlp& q1, const Matrix& states) {
  const Var s = Var::constant(states);
  const Var q = critic_value(q1, s, actor.act_var(s, GradMode::Track), GradMode::Frozen);
  ActorLoss out;
  out.loss = -nn::mean(q);
  out.q_term = -out.loss.item();
  return out;
}

namespace {

double apply(Policy& actor, const ActorLoss& l, double lr, nn::Adam& adam) {
  nn::backward(l.loss);
  const auto params = actor.net.parameters();
  adam.step(params, lr);
  return l.loss.item();
}

}  // namespace

double td3bc_actor_update(Policy& actor, const CriticPair& critics, const data::Batch& batch,
                          double alpha, double lr, nn::Adam& adam) {
  actor.net.zero_grad();
  return apply(actor, td3bc_actor_loss(actor, critics.q1, batch, alpha), lr, adam);
}

double awac_actor_update(Policy& actor, const CriticPair& critics, const data::Batch& batch,
                         double lambda, double lr, nn::Adam& adam) {
  actor.net.zero_grad();
  return apply(actor, awac_actor_loss(actor, critics, batch, lambda), lr, adam);
}

double awac_mcep_update(Policy& actor, const CriticPair& critics, const data::Batch& batch,
                        double lambda_e, double lr, nn::Adam& adam, Rng& rng) {
  actor.net.zero_grad();
  const Matrix noise = nn::standard_normal(batch.states.rows(),
                                           static_cast<Eigen::Index>(actor.action_dim()), rng);
  return apply(actor, awac_mcep_loss(actor, critics, batch, lambda_e, noise), lr, adam);
}

// ---------------------------------------------------------------------------

bool divergence_check(std::span<const double> window, double q_max) {
  if (window.empty()) throw ContractViolation("divergence window is empty");
  double sum = 0.0;
  for (double v : window) {
    if (!std::isfinite(v)) return true;
    sum += std::abs(v);
  }
  return sum / static_cast<double>(window.size()) > q_max;
}

double default_q_max(const data::Dataset& d, double gamma) {
  double r = 0.0;
  for (float x : d.rewards) r = std::max(r, std::abs(static_cast<double>(x)));
  return std::max(1.0, 100.0 * r / (1.0 - gamma));
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& log) {
  out << "step,critic_loss,actor_loss_target,actor_loss_eval,mean_abs_q,diverged\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.step << ',' << r.critic_loss << ',' << r.actor_loss_target << ','
        << r.actor_loss_eval << ',' << r.mean_abs_q << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

nn::Checkpoint TrainArtifacts::policy_checkpoint(const Policy& p) const {
  return nn::Checkpoint{p.net, p.head_kind(), state_mean, state_std};
}

nn::Checkpoint TrainArtifacts::critic_checkpoint(const nn::Mlp& q) const {
  return nn::Checkpoint{q, nn::HeadKind::Critic, state_mean, state_std};
}

// ---------------------------------------------------------------------------

namespace {

/// Sliding window over mean |Q| feeding the divergence monitor.
class DivergenceMonitor {
 public:
  DivergenceMonitor(std::size_t window, double q_max) : window_(window), q_max_(q_max) {}

  bool push(double mean_abs_q) {
    values_.push_back(mean_abs_q);
    if (values_.size() > window_) values_.pop_front();
    const std::vector<double> w(values_.begin(), values_.end());
    return divergence_check(w, q_max_);
  }

  std::string reason() const {
    std::ostringstream os;
    const double last = values_.empty() ? 0.0 : values_.back();
    if (!std::isfinite(last)) {
      os << "non-finite Q estimate";
    } else {
      os << "mean |Q| exceeded " << q_max_;
    }
    return os.str();
  }

 private:
  std::size_t window_;
  double q_max_;
  std::deque<double> values_;
};

data::Batch draw(const data::Dataset& d, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0 || batch_size >= d.size()) return data::full_batch(d);
  return data::sample_batch(d, batch_size, rng);
}

}  // namespace

TrainArtifacts train(const TrainConfig& config, const data::Dataset& dataset,
                     const CheckpointHook& on_checkpoint) {
  config.validate();
  if (config.algorithm == Algorithm::TabularKl) {
    throw ValidationError("tabular_kl runs through train_tabular");
  }
  if (dataset.empty()) throw ValidationError("training dataset is empty");
  dataset.validate();

  TrainArtifacts art;
  data::Dataset normalized_storage;
  const data::Dataset* d = &dataset;
  if (config.normalize_states) {
    auto nd = data::normalize_states(dataset);
    normalized_storage = std::move(nd.data);
    d = &normalized_storage;
    art.state_mean = d->meta.state_mean;
    art.state_std = d->meta.state_std;
  }
  const std::size_t sd = d->meta.state_dim;
  const std::size_t ad = d->meta.action_dim;
  const bool td3bc = config.algorithm == Algorithm::Td3bc;
  const PolicyKind kind = td3bc ? PolicyKind::Deterministic : PolicyKind::TanhGaussian;

  const Rng root(config.seed);
  Rng init_rng = root.split(1);
  Rng eval_init_rng = root.split(2);
  Rng ac_rng = root.split(3);
  Rng eval_rng = root.split(4);

  art.critics = CriticPair::make(sd, ad, config.hidden, config.activation, init_rng);
  art.target_policy =
      Policy::make(kind, sd, ad, config.hidden, config.activation, init_rng, "actor");
  if (config.mcep_enabled) {
    art.eval_policy =
        Policy::make(kind, sd, ad, config.hidden, config.activation, eval_init_rng, "actor_e");
  }

  nn::Adam critic_adam, actor_adam, eval_adam;
  const Smoothing smoothing{td3bc ? config.smoothing_std : 0.0, config.smoothing_clip};
  const double q_max = config.q_max > 0.0 ? config.q_max : default_q_max(*d, config.gamma);
  DivergenceMonitor monitor(config.divergence_window, q_max);

  auto update_target = [&](const data::Batch& b) {
    return td3bc ? td3bc_actor_update(art.target_policy, art.critics, b, config.alpha_tilde,
                                      config.lr_actor, actor_adam)
                 : awac_actor_update(art.target_policy, art.critics, b, config.lambda_tilde,
                                     config.lr_actor, actor_adam);
  };
  auto update_eval = [&](const data::Batch& b) {
    return td3bc ? td3bc_actor_update(*art.eval_policy, art.critics, b, config.alpha_e,
                                      config.lr_actor_e, eval_adam)
                 : awac_mcep_update(*art.eval_policy, art.critics, b, config.lambda_e,
                                    config.lr_actor_e, eval_adam, eval_rng);
  };
  auto fail = [&](std::string reason) {
    art.diverged = true;
    art.divergence_reason = std::move(reason);
    if (!art.log.empty()) art.log.back().diverged = true;
  };

  const bool eval_inline = config.mcep_enabled && config.update_mode == UpdateMode::Simultaneous;
  MetricRow row;
  for (std::size_t step = 0; step < config.steps; ++step) {
    row.step = step + 1;
    const data::Batch batch = draw(*d, config.batch_size, ac_rng);
    try {
      const Matrix y = critic_target(batch, art.target_policy, art.critics, config.gamma,
                                     smoothing, ac_rng);
      if (!y.allFinite()) {
        art.log.push_back(row);
        fail("non-finite critic target");
        break;
      }
      row.critic_loss =
          critic_step(art.critics, batch, y, config.lr_critic, critic_adam, &row.mean_abs_q);
      art.critics.soft_update(config.eta);

      if ((step + 1) % config.policy_delay == 0) {
        if (eval_inline && config.parallel_policy_updates) {
          auto fut = std::async(std::launch::async, [&] { return update_eval(batch); });
          row.actor_loss_target = update_target(batch);
          row.actor_loss_eval = fut.get();
        } else {
          row.actor_loss_target = update_target(batch);
          if (eval_inline) row.actor_loss_eval = update_eval(batch);
        }
      }
    } catch (const NumericError& e) {
      art.log.push_back(row);
      fail(std::string("non-finite gradient: ") + e.what());
      break;
    }
    const bool tripped = monitor.push(row.mean_abs_q) || !std::isfinite(row.critic_loss);
    art.log.push_back(row);
    if (tripped) {
      fail(monitor.reason());
      break;
    }
    if (on_checkpoint && config.checkpoint_interval > 0 &&
        (step + 1) % config.checkpoint_interval == 0) {
      on_checkpoint(step + 1, art);
    }
  }

  if (config.mcep_enabled && config.update_mode == UpdateMode::Afterward && !art.diverged) {
    row.critic_loss = 0.0;
    row.actor_loss_target = 0.0;
    for (std::size_t i = 0; i < config.steps; ++i) {
      row.step = config.steps + i + 1;
      const data::Batch batch = draw(*d, config.batch_size, eval_rng);
      try {
        row.actor_loss_eval = update_eval(batch);
      } catch (const NumericError& e) {
        art.log.push_back(row);
        fail(std::string("non-finite gradient: ") + e.what());
        break;
      }
      row.mean_abs_q = art.critics.q1_value(batch.states, batch.actions).cwiseAbs().mean();
      art.log.push_back(row);
      if (on_checkpoint && config.checkpoint_interval > 0 &&
          (i + 1) % config.checkpoint_interval == 0) {
        on_checkpoint(row.step, art);
      }
    }
  }
  return art;
}

// ---------------------------------------------------------------------------
// Tabular

namespace {

void softmax_row(const double* logits, std::size_t n, double* out) {
  double m = logits[0];
  for (std::size_t a = 1; a < n; ++a) m = std::max(m, logits[a]);
  double z = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    out[a] = std::exp(logits[a] - m);
    z += out[a];
  }
  for (std::size_t a = 0; a < n; ++a) out[a] /= z;
}

void check_shapes(const TabularActor& actor, const dp::QTable& q,
                  const dp::TabularPolicy& behavior) {
  if (q.n_states != actor.n_states || q.n_actions != actor.n_actions ||
      behavior.n_states != actor.n_states || behavior.n_actions != actor.n_actions) {
    throw ValidationError("tabular actor, Q table and behaviour policy shapes differ");
  }
}

}  // namespace

dp::TabularPolicy TabularActor::policy() const {
  dp::TabularPolicy p(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    softmax_row(&logits[s * n_actions], n_actions, &p.probs[s * n_actions]);
  }
  return p;
}

dp::TabularPolicy estimate_behavior(const data::Dataset& d, std::size_t n_states,
                                    std::size_t n_actions) {
  std::vector<double> counts(n_states * n_actions, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto s = static_cast<std::size_t>(d.states[i]);
    const auto a = static_cast<std::size_t>(d.actions[i]);
    if (s >= n_states || a >= n_actions) {
      throw ValidationError("dataset index out of range for the tabular model at row " +
                            std::to_string(i));
    }
    counts[s * n_actions + a] += 1.0;
  }
  dp::TabularPolicy p(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    double z = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) z += counts[s * n_actions + a];
    for (std::size_t a = 0; a < n_actions; ++a) p.at(s, a) = counts[s * n_actions + a] / z;
  }
  return p;
}

double tabular_kl_state_loss(const TabularActor& actor, const dp::QTable& q,
                             const dp::TabularPolicy& behavior, double w, std::size_t s,
                             double q_scale) {
  check_shapes(actor, q, behavior);
  const std::size_t n = actor.n_actions;
  std::vector<double> pi(n);
  softmax_row(&actor.logits[s * n], n, pi.data());
  double loss = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    loss -= q_scale * pi[a] * q.at(s, a);
    const double b = behavior.at(s, a);
    if (b > 0.0) loss += w * b * (std::log(b) - std::log(pi[a]));
  }
  return loss;
}

double tabular_kl_actor_update(TabularActor& actor, const dp::QTable& q,
                               const dp::TabularPolicy& behavior, double w, double lr,
                               std::span<const std::size_t> states, double q_scale) {
  check_shapes(actor, q, behavior);
  if (states.empty()) return 0.0;
  const std::size_t n = actor.n_actions;
  std::vector<double> pi(n);
  double total = 0.0;
  for (std::size_t s : states) {
    double* z = &actor.logits[s * n];
    softmax_row(z, n, pi.data());
    double v = 0.0;
    for (std::size_t a = 0; a < n; ++a) v += pi[a] * q.at(s, a);
    for (std::size_t a = 0; a < n; ++a) {
      const double b = behavior.at(s, a);
      total -= q_scale * pi[a] * q.at(s, a);
      if (b > 0.0) total += w * b * (std::log(b) - std::log(pi[a]));
    }
    // d/dz_a of -sum pi Q is -pi_a (Q_a - V); of KL(beta || pi) it is pi_a - beta_a.
    for (std::size_t a = 0; a < n; ++a) {
      const double g = -q_scale * pi[a] * (q.at(s, a) - v) + w * (pi[a] - behavior.at(s, a));
      z[a] -= lr * g;
    }
  }
  return total / static_cast<double>(states.size());
}

LinearFeatures LinearFeatures::tabular(std::size_t n_states, std::size_t n_actions) {
  LinearFeatures f;
  f.n_states = n_states;
  f.n_actions = n_actions;
  f.n_params = n_states * n_actions;
  f.phi.resize(n_states * n_actions);
  for (std::size_t k = 0; k < f.phi.size(); ++k) f.phi[k] = {{k, 1.0}};
  return f;
}

double LinearFeatures::value(std::span<const double> theta, std::size_t s, std::size_t a) const {
  double q = 0.0;
  for (const auto& [k, x] : at(s, a)) q += theta[k] * x;
  return q;
}

dp::QTable LinearFeatures::q_table(std::span<const double> theta) const {
  dp::QTable q(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) q.at(s, a) = value(theta, s, a);
  }
  return q;
}

TabularTrainResult train_tabular(const TrainConfig& config, const data::Dataset& dataset,
                                 std::size_t n_states, std::size_t n_actions,
                                 const std::optional<LinearFeatures>& features) {
  config.validate();
  if (dataset.empty()) throw ValidationError("training dataset is empty");
  const LinearFeatures f = features ? *features : LinearFeatures::tabular(n_states, n_actions);
  if (f.n_states != n_states || f.n_actions != n_actions || f.phi.size() != n_states * n_actions) {
    throw ValidationError("feature map does not match the tabular model");
  }

  const std::size_t N = dataset.size();
  std::vector<std::size_t> s(N), a(N), s2(N);
  std::vector<double> r(N), done(N);
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < N; ++i) {
    s[i] = static_cast<std::size_t>(dataset.states[i]);
    a[i] = static_cast<std::size_t>(dataset.actions[i]);
    s2[i] = static_cast<std::size_t>(dataset.next_states[i]);
    r[i] = dataset.rewards[i];
    done[i] = dataset.dones[i];
    if (s[i] >= n_states || a[i] >= n_actions || s2[i] >= n_states) {
      throw ValidationError("dataset index out of range for the tabular model at row " +
                            std::to_string(i));
    }
    seen.insert(s[i]);
  }
  const std::vector<std::size_t> observed(seen.begin(), seen.end());

  TabularTrainResult res;
  res.behavior = estimate_behavior(dataset, n_states, n_actions);

  const Rng root(config.seed);
  Rng init_rng = root.split(1);
  Rng ac_rng = root.split(3);

  std::vector<double> theta(f.n_params);
  for (double& t : theta) t = init_rng.uniform(-0.01, 0.01);
  std::vector<double> theta_t = theta;
  TabularActor actor(n_states, n_actions);
  TabularActor eval_actor(n_states, n_actions);

  const double q_max = config.q_max > 0.0 ? config.q_max : default_q_max(dataset, config.gamma);
  DivergenceMonitor monitor(config.divergence_window, q_max);
  const bool full = config.batch_size == 0 || config.batch_size >= N;
  std::vector<std::size_t> idx(full ? N : config.batch_size);
  if (full) {
    for (std::size_t i = 0; i < N; ++i) idx[i] = i;
  }
  std::vector<double> g(f.n_params), h(f.n_params), v_next(n_states);

  auto strengths = [&](double alpha, double w, const dp::QTable& q) {
    if (config.tabular_strength == TabularStrength::KlWeight) return std::pair{1.0, w};
    if (config.tabular_strength == TabularStrength::QWeight) return std::pair{alpha, 1.0};
    double m = 0.0;
    for (std::size_t i : idx) m += std::abs(q.at(s[i], a[i]));
    m /= static_cast<double>(idx.size());
    return std::pair{alpha / std::max(m, kQNormEps), 1.0};
  };
  auto eval_step = [&](const dp::QTable& q) {
    const auto [scale, w] = strengths(config.alpha_e, config.kl_weight_e, q);
    return tabular_kl_actor_update(eval_actor, q, res.behavior, w, config.lr_actor_e, observed,
                                   scale);
  };
  auto fail = [&](std::string reason) {
    res.diverged = true;
    res.divergence_reason = std::move(reason);
    if (!res.log.empty()) res.log.back().diverged = true;
  };

  const bool eval_inline = config.mcep_enabled && config.update_mode == UpdateMode::Simultaneous;
  MetricRow row;
  for (std::size_t step = 0; step < config.steps; ++step) {
    row.step = step + 1;
    if (!full) {
      for (auto& i : idx) i = ac_rng.index(N);
    }
    const dp::TabularPolicy pi = actor.policy();
    for (std::size_t x = 0; x < n_states; ++x) {
      double v = 0.0;
      for (std::size_t b = 0; b < n_actions; ++b) v += pi.at(x, b) * f.value(theta_t, x, b);
      v_next[x] = v;
    }
    std::fill(g.begin(), g.end(), 0.0);
    std::fill(h.begin(), h.end(), 0.0);
    double loss = 0.0, abs_q = 0.0;
    for (std::size_t i : idx) {
      const double q = f.value(theta, s[i], a[i]);
      const double delta = q - (r[i] + config.gamma * (1.0 - done[i]) * v_next[s2[i]]);
      loss += delta * delta;
      abs_q += std::abs(q);
      for (const auto& [k, x] : f.at(s[i], a[i])) {
        g[k] += delta * x;
        h[k] += x * x;
      }
    }
    const double n = static_cast<double>(idx.size());
    row.critic_loss = loss / n;
    row.mean_abs_q = abs_q / n;
    for (std::size_t k = 0; k < f.n_params; ++k) {
      if (h[k] > 0.0) theta[k] -= config.lr_critic * g[k] / h[k];
      theta_t[k] = (1.0 - config.eta) * theta_t[k] + config.eta * theta[k];
    }

    if ((step + 1) % config.policy_delay == 0) {
      const dp::QTable q = f.q_table(theta);
      const auto [scale, w] = strengths(config.alpha_tilde, config.kl_weight, q);
      row.actor_loss_target =
          tabular_kl_actor_update(actor, q, res.behavior, w, config.lr_actor, observed, scale);
      if (eval_inline) row.actor_loss_eval = eval_step(q);
    }
    const bool tripped = monitor.push(row.mean_abs_q) || !std::isfinite(row.critic_loss);
    res.log.push_back(row);
    if (tripped) {
      fail(monitor.reason());
      break;
    }
  }

  if (config.mcep_enabled && config.update_mode == UpdateMode::Afterward && !res.diverged) {
    const dp::QTable q = f.q_table(theta);
    row.critic_loss = 0.0;
    row.actor_loss_target = 0.0;
    for (std::size_t i = 0; i < config.steps; ++i) {
      row.step = config.steps + i + 1;
      row.actor_loss_eval = eval_step(q);
      res.log.push_back(row);
    }
  }

  res.theta = theta;
  res.q = f.q_table(theta);
  res.target_policy = actor.policy();
  if (config.mcep_enabled) res.eval_policy = eval_actor.policy();
  return res;
}

mdp::TabularMDP empirical_mdp(const data::Dataset& d, std::size_t n_states, std::size_t n_actions,
                              double gamma) {
  const std::size_t S = n_states + 1;
  const std::size_t absorbing = n_states;
  mdp::TabularMDP m(S, n_actions, gamma);
  std::vector<double> n(n_states * n_actions, 0.0);
  std::vector<double> rsum(n_states * n_actions, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto s = static_cast<std::size_t>(d.states[i]);
    const auto a = static_cast<std::size_t>(d.actions[i]);
    const auto s2 = static_cast<std::size_t>(d.next_states[i]);
    if (s >= n_states || a >= n_actions || s2 >= n_states) {
      throw ValidationError("dataset index out of range for the tabular model at row " +
                            std::to_string(i));
    }
    n[s * n_actions + a] += 1.0;
    rsum[s * n_actions + a] += d.rewards[i];
    m.transition(s, a, d.dones[i] != 0.0f ? absorbing : s2) += 1.0;
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      const double c = n[s * n_actions + a];
      if (c == 0.0) {
        m.transition(s, a, absorbing) = 1.0;
        continue;
      }
      for (std::size_t x = 0; x < S; ++x) m.transition(s, a, x) /= c;
      m.reward(s, a) = rsum[s * n_actions + a] / c;
    }
  }
  for (std::size_t a = 0; a < n_actions; ++a) m.transition(absorbing, a, absorbing) = 1.0;
  m.set_terminal(absorbing, true);

  auto& p0 = m.start_dist();
  const auto trajs = d.trajectories();
  for (const auto& [b, e] : trajs) p0[static_cast<std::size_t>(d.states[b])] += 1.0;
  for (double& p : p0) p /= static_cast<double>(trajs.size());
  m.validate();
  return m;
}

std::vector<std::size_t> default_overbootstrap_region(const mdp::Maze& maze, std::size_t count) {
  const auto& g = maze.cells[maze.goal];
  std::vector<std::pair<int, std::size_t>> order;
  for (std::size_t s = 0; s < maze.cells.size(); ++s) {
    if (s == maze.goal) continue;
    const int dist = std::abs(maze.cells[s].row - g.row) + std::abs(maze.cells[s].col - g.col);
    order.emplace_back(-dist, s);
  }
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> region;
  for (std::size_t i = 0; i < std::min(count, order.size()); ++i) region.push_back(order[i].second);
  return region;
}

OverBootstrapInstance over_bootstrap_instance(const mdp::Maze& maze, const data::Dataset& d,
                                              const std::vector<std::size_t>& region, double delta,
                                              std::size_t kept_action) {
  const std::size_t S = maze.mdp.n_states();
  const std::size_t A = maze.mdp.n_actions();
  if (kept_action >= A) throw ValidationError("kept action is out of range");
  if (!(delta > 0.0)) throw ValidationError("delta must be positive");
  std::vector<char> in_region(S, 0);
  for (std::size_t s : region) {
    if (s >= S || s == maze.goal) throw ValidationError("region must list non-goal maze states");
    in_region[s] = 1;
  }

  OverBootstrapInstance out;
  out.region = region;
  out.dataset.meta = d.meta;
  out.dataset.meta.recipe = d.meta.recipe + "+overbootstrap";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto s = static_cast<std::size_t>(d.states[i]);
    const auto a = static_cast<std::size_t>(d.actions[i]);
    if (in_region[s] && a != kept_action) {
      if (!out.dataset.empty()) {
        const std::size_t last = out.dataset.size() - 1;
        if (!out.dataset.episode_end(last)) out.dataset.timeouts[last] = 1.0f;
      }
      continue;
    }
    out.dataset.append_range(d, i, i + 1);
  }

  out.features = LinearFeatures::tabular(S, A);
  for (std::size_t s : region) {
    const std::size_t k = s * A + kept_action;
    for (std::size_t a = 0; a < A; ++a) {
      out.features.phi[s * A + a] = {{k, a == kept_action ? 1.0 : 1.0 + delta}};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

OnlineTd3Result train_online_td3(mdp::Environment& env, const OnlineTd3Config& config) {
  if (env.discrete()) throw ValidationError("online TD3 needs a continuous-action environment");
  if (config.steps == 0 || config.batch_size == 0 || config.policy_delay == 0 ||
      config.snapshot_interval == 0) {
    throw ValidationError("online TD3 step counts must be positive");
  }
  const std::size_t sd = env.obs_dim();
  const std::size_t ad = env.act_dim();
  const Rng root(config.seed);
  Rng init_rng = root.split(1);
  Rng rng = root.split(2);
  Rng env_rng = root.split(3);

  CriticPair critics = CriticPair::make(sd, ad, config.hidden, nn::Activation::Relu, init_rng);
  Policy actor = Policy::make(PolicyKind::Deterministic, sd, ad, config.hidden,
                              nn::Activation::Relu, init_rng, "actor");
  nn::Adam critic_adam, actor_adam;

  OnlineTd3Result res;
  res.replay.meta.env_id = env.id();
  res.replay.meta.state_dim = sd;
  res.replay.meta.action_dim = ad;
  res.replay.meta.recipe = "replay";

  std::vector<double> obs = env.reset(env_rng);
  int t = 0;
  std::vector<double> act(ad);
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (step < config.start_steps) {
      for (auto& x : act) x = rng.uniform(-1.0, 1.0);
    } else {
      const Matrix o = Eigen::Map<const Matrix>(obs.data(), 1, static_cast<Eigen::Index>(sd));
      const Matrix pa = actor.act(o);
      for (std::size_t j = 0; j < ad; ++j) {
        act[j] = std::clamp(pa(0, static_cast<Eigen::Index>(j)) +
                                config.exploration_std * rng.normal(),
                            -1.0, 1.0);
      }
    }
    const mdp::EnvStep st = env.step(act, env_rng);
    ++t;
    const bool timeout = !st.terminal && t >= env.horizon();
    res.replay.push(obs, act, st.reward, st.observation, st.terminal, timeout);
    obs = st.observation;
    if (st.terminal || timeout) {
      obs = env.reset(env_rng);
      t = 0;
    }

    if (step >= config.start_steps) {
      const data::Batch batch = data::sample_batch(res.replay, config.batch_size, rng);
      const Matrix y = critic_target(batch, actor, critics, config.gamma, {0.2, 0.5}, rng);
      critic_update(critics, batch, y, config.lr, critic_adam);
      critics.soft_update(config.eta);
      if ((step + 1) % config.policy_delay == 0) {
        actor.net.zero_grad();
        apply(actor, td3_actor_loss(actor, critics.q1, batch.states), config.lr, actor_adam);
      }
    }
    if ((step + 1) % config.snapshot_interval == 0) res.snapshots.emplace_back(step + 1, actor);
  }
  return res;
}

}  // namespace mcep::algos
