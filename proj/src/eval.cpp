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

#include "mcep/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <thread>

#include <json.hpp>

namespace mcep::eval {

using nn::Matrix;

const char* to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::None: return "none";
    case SelectionMode::Argmax: return "argmax";
    case SelectionMode::Softmax: return "softmax";
  }
  return "?";
}

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "none") return SelectionMode::None;
  if (s == "argmax") return SelectionMode::Argmax;
  if (s == "softmax") return SelectionMode::Softmax;
  throw ValidationError("unknown selection mode '" + s + "' (expected none, argmax or softmax)");
}

void SelectionConfig::validate() const {
  if (mode == SelectionMode::None) return;
  if (n_samples < 1) throw ValidationError("selection n_samples must be >= 1");
  if (!(noise_std >= 0.0)) throw ValidationError("selection noise_std must be >= 0");
  if (!(temperature > 0.0)) throw ValidationError("selection temperature must be > 0");
}

// ---------------------------------------------------------------------------

Agent Agent::target(const algos::TrainArtifacts& art) {
  return Agent{art.target_policy, art.critics, art.state_mean, art.state_std};
}

Agent Agent::evaluation(const algos::TrainArtifacts& art) {
  if (!art.eval_policy) throw ContractViolation("the run has no evaluation policy");
  return Agent{*art.eval_policy, art.critics, art.state_mean, art.state_std};
}

Agent Agent::from_checkpoints(const nn::Checkpoint& policy, const std::optional<nn::Checkpoint>& q1,
                              const std::optional<nn::Checkpoint>& q2) {
  Agent a;
  switch (policy.head) {
    case nn::HeadKind::Deterministic: a.policy.kind = algos::PolicyKind::Deterministic; break;
    case nn::HeadKind::TanhGaussian: a.policy.kind = algos::PolicyKind::TanhGaussian; break;
    case nn::HeadKind::Critic: throw DataError(DataError::Kind::Format, "expected a policy checkpoint, got a critic");
  }
  a.policy.net = policy.net;
  a.state_mean = policy.input_mean;
  a.state_std = policy.input_std;
  if (q1.has_value() != q2.has_value()) {
    throw ValidationError("both critic checkpoints are needed");
  }
  if (q1) {
    if (q1->head != nn::HeadKind::Critic || q2->head != nn::HeadKind::Critic) {
      throw DataError(DataError::Kind::Format, "expected critic checkpoints");
    }
    algos::CriticPair c;
    c.q1 = c.q1_target = q1->net;
    c.q2 = c.q2_target = q2->net;
    a.critics = std::move(c);
  }
  return a;
}

Matrix Agent::observe(const Matrix& raw) const {
  if (state_mean.empty()) return raw;
  Matrix x = raw;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    x.col(j) = ((x.col(j).array() - state_mean[j]) / state_std[j]).matrix();
  }
  return x;
}

Matrix Agent::observe(std::span<const double> raw) const {
  Matrix x(1, static_cast<Eigen::Index>(raw.size()));
  for (std::size_t j = 0; j < raw.size(); ++j) x(0, static_cast<Eigen::Index>(j)) = raw[j];
  return observe(x);
}

std::vector<double> softmax_probabilities(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw ValidationError("no candidates to score");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp((scores[i] - m) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

std::size_t select_index(std::span<const double> scores, SelectionMode mode, double temperature,
                         Rng& rng) {
  if (scores.empty()) throw ValidationError("no candidates to score");
  if (mode == SelectionMode::Softmax) {
    const auto p = softmax_probabilities(scores, temperature);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return i;
    }
    for (std::size_t i = p.size(); i-- > 0;) {
      if (p[i] > 0.0) return i;
    }
  }
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<double> select_action(const Agent& agent, std::span<const double> observation,
                                  const SelectionConfig& cfg, Rng& rng) {
  const Matrix s = agent.observe(observation);
  const Matrix base = agent.policy.act(s);
  if (cfg.mode == SelectionMode::None) {
    return std::vector<double>(base.data(), base.data() + base.size());
  }
  if (!agent.critics) throw ContractViolation("action selection needs critics");
  const auto n = static_cast<Eigen::Index>(cfg.n_samples);
  Matrix cand = base.replicate(n, 1);
  for (Eigen::Index i = 0; i < cand.size(); ++i) {
    cand.data()[i] = std::clamp(cand.data()[i] + cfg.noise_std * rng.normal(), -1.0, 1.0);
  }
  const Matrix q = agent.critics->min_q(s.replicate(n, 1), cand);
  const std::vector<double> scores(q.data(), q.data() + q.size());
  const auto k = static_cast<Eigen::Index>(select_index(scores, cfg.mode, cfg.temperature, rng));
  std::vector<double> out(static_cast<std::size_t>(cand.cols()));
  for (Eigen::Index j = 0; j < cand.cols(); ++j) out[static_cast<std::size_t>(j)] = cand(k, j);
  return out;
}

// ---------------------------------------------------------------------------

EvalReport summarize(std::vector<double> returns) {
  EvalReport r;
  r.episodes = returns.size();
  if (returns.empty()) return r;
  double sum = 0.0;
  for (double x : returns) sum += x;
  r.mean_return = sum / static_cast<double>(returns.size());
  if (returns.size() > 1) {
    double ss = 0.0;
    for (double x : returns) ss += (x - r.mean_return) * (x - r.mean_return);
    const double sd = std::sqrt(ss / static_cast<double>(returns.size() - 1));
    r.std_error = sd / std::sqrt(static_cast<double>(returns.size()));
  }
  r.returns = std::move(returns);
  return r;
}

EvalReport evaluate(mdp::Environment& env, const data::ActionFn& policy, std::size_t episodes,
                    Rng& rng, double discount) {
  if (episodes < 1) throw ValidationError("evaluation needs at least one episode");
  std::vector<double> returns;
  returns.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> obs = env.reset(rng);
    double ret = 0.0, weight = 1.0;
    for (int t = 0; t < env.horizon(); ++t) {
      const auto act = policy(obs, rng);
      const mdp::EnvStep st = env.step(act, rng);
      ret += weight * st.reward;
      weight *= discount;
      obs = st.observation;
      if (st.terminal) break;
    }
    returns.push_back(ret);
  }
  return summarize(std::move(returns));
}

EvalReport evaluate(mdp::Environment& env, const Agent& agent, std::size_t episodes,
                    const SelectionConfig& cfg, Rng& rng, double discount) {
  cfg.validate();
  const data::ActionFn fn = [&agent, &cfg](const std::vector<double>& obs, Rng& r) {
    return select_action(agent, obs, cfg, r);
  };
  return evaluate(env, fn, episodes, rng, discount);
}

data::ActionFn tabular_actor(const dp::TabularPolicy& pi) {
  return [pi](const std::vector<double>& obs, Rng& rng) {
    const auto s = static_cast<std::size_t>(obs.at(0));
    return std::vector<double>{static_cast<double>(pi.sample(s, rng))};
  };
}

double normalized_return(double raw, double random_score, double expert_score) {
  if (!(expert_score > random_score)) {
    throw ValidationError("normalisation anchors are degenerate: expert score must exceed random score");
  }
  return 100.0 * (raw - random_score) / (expert_score - random_score);
}

// ---------------------------------------------------------------------------

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return sorted[lo] + f * (sorted[hi] - sorted[lo]);
}

}  // namespace

QDiffReport summarize_qdiff(std::vector<double> values, std::size_t bins) {
  if (values.empty()) throw ValidationError("q-difference diagnostic needs a nonempty dataset");
  if (bins == 0) bins = 1;
  QDiffReport r;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(values.size());
  r.min = sorted.front();
  r.max = sorted.back();
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) r.quantiles.emplace_back(q, quantile(sorted, q));
  const double width = r.max > r.min ? (r.max - r.min) / static_cast<double>(bins) : 1.0;
  for (std::size_t b = 0; b <= bins; ++b) {
    r.histogram_edges.push_back(r.min + width * static_cast<double>(b));
  }
  r.histogram_counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - r.min) / width);
    r.histogram_counts[std::min(b, bins - 1)] += 1;
  }
  r.values = std::move(values);
  return r;
}

QDiffReport q_diff_diagnostic(const Agent& agent, const data::Dataset& d) {
  if (d.empty()) throw ValidationError("q-difference diagnostic needs a nonempty dataset");
  if (!agent.critics) throw ContractViolation("q-difference diagnostic needs critics");
  const auto n = static_cast<Eigen::Index>(d.size());
  const auto sd = static_cast<Eigen::Index>(d.meta.state_dim);
  const auto ad = static_cast<Eigen::Index>(d.meta.action_dim);
  Matrix s(n, sd), a(n, ad);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < sd; ++j) s(i, j) = d.states[i * sd + j];
    for (Eigen::Index j = 0; j < ad; ++j) a(i, j) = d.actions[i * ad + j];
  }
  s = agent.observe(s);
  const Matrix diff = agent.critics->min_q(s, agent.policy.act(s)) - agent.critics->min_q(s, a);
  return summarize_qdiff(std::vector<double>(diff.data(), diff.data() + diff.size()));
}

QDiffReport q_diff_diagnostic(const dp::QTable& q, const dp::TabularPolicy& pi,
                              const data::Dataset& d) {
  if (d.empty()) throw ValidationError("q-difference diagnostic needs a nonempty dataset");
  std::vector<double> values(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto s = static_cast<std::size_t>(d.states[i]);
    const auto a = static_cast<std::size_t>(d.actions[i]);
    double v = 0.0;
    for (std::size_t b = 0; b < q.n_actions; ++b) v += pi.at(s, b) * q.at(s, b);
    values[i] = v - q.at(s, a);
  }
  return summarize_qdiff(std::move(values));
}

std::string qdiff_json(const QDiffReport& r) {
  nlohmann::json j;
  j["samples"] = r.values.size();
  j["mean"] = r.mean;
  j["min"] = r.min;
  j["max"] = r.max;
  nlohmann::json qs = nlohmann::json::object();
  for (const auto& [level, v] : r.quantiles) {
    qs["p" + std::to_string(static_cast<int>(std::lround(level * 100)))] = v;
  }
  j["quantiles"] = qs;
  j["histogram"] = {{"edges", r.histogram_edges}, {"counts", r.histogram_counts}};
  return j.dump(2);
}

void write_qdiff_csv(std::ostream& out, const QDiffReport& r) {
  out << "index,q_diff\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.values.size(); ++i) out << i << ',' << r.values[i] << '\n';
}

// ---------------------------------------------------------------------------

namespace {

struct StrengthSummary {
  double strength;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double target_sum = 0.0;
  double eval_sum = 0.0;
  std::size_t eval_runs = 0;
};

std::vector<StrengthSummary> by_strength(const std::vector<SweepCell>& cells) {
  std::map<double, StrengthSummary> m;
  for (const auto& c : cells) {
    auto& s = m.try_emplace(c.strength, StrengthSummary{c.strength}).first->second;
    ++s.runs;
    if (c.diverged) {
      ++s.diverged;
      continue;
    }
    s.target_sum += c.return_target;
    if (!std::isnan(c.return_eval)) {
      s.eval_sum += c.return_eval;
      ++s.eval_runs;
    }
  }
  std::vector<StrengthSummary> out;
  for (auto& [k, v] : m) out.push_back(v);
  return out;
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::optional<double> SweepReport::safe_edge() const {
  std::optional<double> edge;
  for (const auto& s : by_strength(cells)) {
    if (s.diverged > 0) break;
    edge = s.strength;
  }
  return edge;
}

std::optional<double> SweepReport::first_all_diverged() const {
  for (const auto& s : by_strength(cells)) {
    if (s.runs > 0 && s.diverged == s.runs) return s.strength;
  }
  return std::nullopt;
}

std::optional<double> SweepReport::improvement_edge() const {
  std::optional<double> edge;
  for (const auto& s : by_strength(cells)) {
    if (s.eval_runs == 0) continue;
    const std::size_t ok = s.runs - s.diverged;
    if (s.eval_sum / static_cast<double>(s.eval_runs) > s.target_sum / static_cast<double>(ok)) {
      edge = s.strength;
    }
  }
  return edge;
}

bool SweepReport::monotone_frontier() const {
  bool seen_all = false;
  for (const auto& s : by_strength(cells)) {
    const bool all = s.runs > 0 && s.diverged == s.runs;
    if (seen_all && !all) return false;
    seen_all = seen_all || all;
  }
  return true;
}

void SweepReport::write_csv(std::ostream& out) const {
  out << "strength,seed,diverged,return_target,return_eval\n";
  out.precision(17);
  for (const auto& c : cells) {
    out << c.strength << ',' << c.seed << ',' << (c.diverged ? 1 : 0) << ',' << c.return_target
        << ',' << c.return_eval << '\n';
  }
}

std::string SweepReport::summary_json() const {
  nlohmann::json j;
  j["parameter"] = parameter;
  j["cells"] = cells.size();
  j["safe_zone_edge"] = opt_json(safe_edge());
  j["first_all_diverged"] = opt_json(first_all_diverged());
  j["improvement_zone_edge"] = opt_json(improvement_edge());
  j["monotone_frontier"] = monotone_frontier();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : by_strength(cells)) {
    const std::size_t ok = s.runs - s.diverged;
    rows.push_back({{"strength", s.strength},
                    {"runs", s.runs},
                    {"diverged", s.diverged},
                    {"mean_return_target",
                     ok ? nlohmann::json(s.target_sum / static_cast<double>(ok)) : nullptr},
                    {"mean_return_eval",
                     s.eval_runs ? nlohmann::json(s.eval_sum / static_cast<double>(s.eval_runs))
                                 : nullptr}});
  }
  j["strengths"] = rows;
  return j.dump(2);
}

std::string default_sweep_parameter(algos::Algorithm a) {
  switch (a) {
    case algos::Algorithm::Td3bc: return "alpha_tilde";
    case algos::Algorithm::Awac: return "lambda_tilde";
    case algos::Algorithm::TabularKl: return "alpha_tilde";
  }
  return "alpha_tilde";
}

void set_strength(algos::TrainConfig& cfg, const std::string& parameter, double value) {
  if (parameter == "alpha_tilde") cfg.alpha_tilde = value;
  else if (parameter == "alpha_e") cfg.alpha_e = value;
  else if (parameter == "lambda_tilde") cfg.lambda_tilde = value;
  else if (parameter == "lambda_e") cfg.lambda_e = value;
  else if (parameter == "kl_weight") cfg.kl_weight = value;
  else if (parameter == "kl_weight_e") cfg.kl_weight_e = value;
  else throw ValidationError("unknown sweep parameter '" + parameter + "'");
}

SweepReport constraint_sweep(const algos::TrainConfig& base, const SweepSpec& spec,
                             const data::Dataset& dataset, const mdp::Environment& env) {
  if (spec.grid.empty()) throw ValidationError("sweep grid is empty");
  if (spec.seeds.empty()) throw ValidationError("sweep needs at least one seed");
  SweepReport report;
  report.parameter =
      spec.parameter.empty() ? default_sweep_parameter(base.algorithm) : spec.parameter;
  std::vector<double> grid = spec.grid;
  std::sort(grid.begin(), grid.end());
  for (double g : grid) {
    for (std::uint64_t seed : spec.seeds) report.cells.push_back({g, seed, false, 0.0, 0.0});
  }
  // Validate the parameter name before spawning work.
  {
    algos::TrainConfig probe = base;
    set_strength(probe, report.parameter, grid.front());
  }
  const auto* maze_env = dynamic_cast<const mdp::MazeEnv*>(&env);
  const bool tabular = base.algorithm == algos::Algorithm::TabularKl;
  if (tabular && !maze_env) throw ValidationError("tabular sweeps need the maze environment");
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto run_cell = [&](SweepCell& cell) {
    algos::TrainConfig cfg = base;
    set_strength(cfg, report.parameter, cell.strength);
    cfg.seed = cell.seed;
    cfg.checkpoint_interval = 0;
    if (tabular) {
      const auto& mz = maze_env->maze();
      const auto res = algos::train_tabular(cfg, dataset, mz.mdp.n_states(), mz.mdp.n_actions(),
                                            spec.features);
      cell.diverged = res.diverged;
      if (res.diverged) {
        cell.return_target = cell.return_eval = nan;
        return;
      }
      cell.return_target = dp::policy_return(mz.mdp, res.target_policy);
      cell.return_eval = res.eval_policy ? dp::policy_return(mz.mdp, *res.eval_policy) : nan;
      return;
    }
    const auto art = algos::train(cfg, dataset);
    cell.diverged = art.diverged;
    if (art.diverged) {
      cell.return_target = cell.return_eval = nan;
      return;
    }
    auto env_copy = env.clone();
    Rng rng = Rng(cell.seed).split(0xe7a1);
    cell.return_target =
        evaluate(*env_copy, Agent::target(art), spec.eval_episodes, spec.selection, rng).mean_return;
    if (art.eval_policy) {
      Rng rng_e = Rng(cell.seed).split(0xe7a2);
      cell.return_eval = evaluate(*env_copy, Agent::evaluation(art), spec.eval_episodes,
                                  spec.selection, rng_e)
                             .mean_return;
    } else {
      cell.return_eval = nan;
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(spec.threads, report.cells.size()));
  if (threads == 1) {
    for (auto& c : report.cells) run_cell(c);
    return report;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < report.cells.size(); i = next++) run_cell(report.cells[i]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return report;
}

}  // namespace mcep::eval
