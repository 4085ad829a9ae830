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

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "mcep/algos.hpp"
#include "mcep/cli.hpp"
#include "mcep/dp.hpp"
#include "mcep/eval.hpp"
#include "mcep/recipes.hpp"

namespace {

using namespace mcep;
using nn::Matrix;
using nn::Var;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::shared_ptr<const mdp::Maze> default_maze() {
  static const auto m = std::make_shared<const mdp::Maze>(mdp::build_maze(mdp::default_maze_spec()));
  return m;
}

// Random-weight fixtures for the gradient checks ------------------------------

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

data::Batch random_batch(Eigen::Index n, Eigen::Index sd, Eigen::Index ad, Rng& rng) {
  return {random_matrix(n, sd, rng), random_matrix(n, ad, rng, 0.9), random_matrix(n, 1, rng),
          random_matrix(n, sd, rng), Matrix::Zero(n, 1)};
}

Matrix flatten(const std::vector<Matrix>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Matrix out(1, n);
  Eigen::Index k = 0;
  for (const auto& p : parts) {
    for (Eigen::Index i = 0; i < p.size(); ++i) out(0, k++) = p.data()[i];
  }
  return out;
}

Matrix grads_of(const std::vector<nn::Parameter*>& params) {
  std::vector<Matrix> g;
  for (auto* p : params) g.push_back(p->grad());
  return flatten(g);
}

Matrix backprop(algos::Policy& pi, const Var& loss) {
  pi.net.zero_grad();
  nn::backward(loss);
  return grads_of(pi.net.parameters());
}

Matrix central_differences(const std::function<double()>& fn, const std::vector<nn::Parameter*>& params) {
  std::vector<Matrix> parts;
  for (auto* p : params) {
    auto& w = p->mutable_value();
    Matrix g(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + 1e-6;
      const double up = fn();
      w.data()[i] = saved - 1e-6;
      const double down = fn();
      w.data()[i] = saved;
      g.data()[i] = (up - down) / 2e-6;
    }
    parts.push_back(g);
  }
  return flatten(parts);
}

double max_rel_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-6}));
  }
  return worst;
}

struct Fixture {
  Rng rng;
  algos::CriticPair critics;
  algos::Policy det;
  algos::Policy gauss;
  data::Batch batch;
  Matrix noise;

  explicit Fixture(std::uint64_t seed) : rng(seed) {
    critics = algos::CriticPair::make(3, 2, {16, 16}, nn::Activation::Tanh, rng);
    det = algos::Policy::make(algos::PolicyKind::Deterministic, 3, 2, {8, 8}, nn::Activation::Tanh, rng, "det");
    gauss = algos::Policy::make(algos::PolicyKind::TanhGaussian, 3, 2, {8, 8}, nn::Activation::Tanh, rng, "g");
    for (auto* p : det.net.parameters()) p->mutable_value() = random_matrix(p->value().rows(), p->value().cols(), rng, 0.5);
    for (auto* p : gauss.net.parameters()) p->mutable_value() = random_matrix(p->value().rows(), p->value().cols(), rng, 0.5);
    batch = random_batch(16, 3, 2, rng);
    noise = nn::standard_normal(16, 2, rng);
  }
};

// TD3BC-style loss with lambda held at its step value.
double td3bc_fd(Fixture& f, double alpha) {
  const double lambda = algos::q_normalizer(f.critics.q1, f.batch, alpha);
  return max_rel_error(
      backprop(f.det, algos::td3bc_actor_loss(f.det, f.critics.q1, f.batch, alpha).loss),
      central_differences(
          [&] {
            const Matrix a = f.det.act(f.batch.states);
            const Matrix q = f.critics.q1.predict((Matrix(16, 5) << f.batch.states, a).finished());
            return (a - f.batch.actions).rowwise().squaredNorm().mean() - lambda * q.mean();
          },
          f.det.net.parameters()));
}

// Point-mass data shared by the neural criteria -------------------------------

const data::PointMassRecipes& pointmass_recipes() {
  static const data::PointMassRecipes r = [] {
    data::PointMassRecipeConfig cfg;
    cfg.online.steps = 20000;
    cfg.anchor_episodes = 20;
    cfg.medium_noise = 0.5;
    return data::build_pointmass_recipes(cfg);
  }();
  return r;
}

std::string to_bytes(const data::Dataset& d) {
  std::ostringstream s;
  data::save(d, s);
  return s.str();
}

std::string to_bytes(const nn::Checkpoint& c) {
  std::ostringstream s;
  nn::save_checkpoint(s, c);
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::uint64_t fingerprint(const algos::TrainArtifacts& art) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const nn::Mlp& net) {
    for (const auto* p : net.parameters()) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p->value().data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(p->value().size()) * sizeof(double); ++i) {
        h = (h ^ bytes[i]) * 1099511628211ull;
      }
    }
  };
  mix(art.critics.q1);
  mix(art.critics.q2);
  mix(art.critics.q1_target);
  mix(art.critics.q2_target);
  mix(art.target_policy.net);
  return h;
}

// Criteria ---------------------------------------------------------------------

Outcome maze_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto maze = default_maze();
  const auto& m = maze->mdp;
  const double optimal = dp::policy_return(m, dp::greedy_policy(dp::value_iteration(m).q));
  bool ok = true;
  std::string detail = fmt("optimal %.4f;", optimal);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto d = data::maze_recipe(maze, rng, {99, 1, 100});
    algos::TrainConfig cfg;
    cfg.algorithm = algos::Algorithm::TabularKl;
    cfg.tabular_strength = algos::TabularStrength::KlWeight;
    cfg.kl_weight = 1.0;
    cfg.mcep_enabled = false;
    cfg.gamma = m.discount();
    cfg.lr_critic = 1.0;
    cfg.lr_actor = 0.5;
    cfg.eta = 0.05;
    cfg.steps = 5000;
    cfg.batch_size = 0;
    cfg.policy_delay = 1;
    cfg.seed = seed;
    const auto res = algos::train_tabular(cfg, d, m.n_states(), m.n_actions());
    const double greedy = dp::policy_return(m, dp::greedy_policy(res.q));
    const double actor = dp::policy_return(m, res.target_policy);
    ok = ok && !res.diverged && greedy >= 0.95 * optimal && actor < greedy;
    detail += fmt(" seed %d greedy/opt %.3f actor/opt %.3f", static_cast<int>(seed), greedy / optimal,
                  actor / optimal);
  }
  const double t = seconds_since(t0);
  ok = ok && t < 120.0;
  return {ok, detail + fmt("; %.1fs", t)};
}

Outcome dp_consistency() {
  const auto maze = default_maze();
  const auto& m = maze->mdp;
  const double tol = 1e-10;
  const auto opt = dp::value_iteration(m, tol);
  const auto pi = dp::greedy_policy(opt.q);
  const double sup = dp::sup_distance(opt.values.v, dp::exact_policy_evaluation(m, pi, tol).values.v);

  mdp::MazeEnv env(maze, 2000);
  Rng rng(2024);
  const auto report = eval::evaluate(env, eval::tabular_actor(pi), 100000, rng, m.discount());
  const double exact = dp::policy_return(m, pi, tol);
  const double gap = std::abs(report.mean_return - exact);
  return {sup < 1e-8 && gap <= 2.0 * report.std_error,
          fmt("sup|V* - V_greedy| %.2e; MC %.5f vs exact %.5f, gap %.3f SE", sup, report.mean_return,
              exact, gap / report.std_error)};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double td3bc = 0.0, td3bc_e = 0.0, awac = 0.0, mcep = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Fixture f(1000 + i);
    td3bc = std::max(td3bc, td3bc_fd(f, 2.5));
    td3bc_e = std::max(td3bc_e, td3bc_fd(f, 10.0));

    const double lambda = 1.0;
    const auto head0 = f.gauss.head(Var::constant(f.batch.states), nn::GradMode::Frozen);
    const Matrix baseline = f.critics.min_q(f.batch.states, head0.mode().value());
    const Matrix adv = f.critics.min_q(f.batch.states, f.batch.actions) - baseline;
    const Matrix w = (adv.array() / lambda).min(algos::kAdvantageExpClip).exp().matrix();
    awac = std::max(
        awac, max_rel_error(backprop(f.gauss, algos::awac_actor_loss(f.gauss, f.critics, f.batch, lambda).loss),
                            central_differences(
                                [&] {
                                  const auto h = f.gauss.head(Var::constant(f.batch.states), nn::GradMode::Frozen);
                                  return -(w.array() * h.log_prob(f.batch.actions).value().array()).mean();
                                },
                                f.gauss.net.parameters())));

    const double lambda_e = 0.6;
    mcep = std::max(
        mcep, max_rel_error(
                  backprop(f.gauss, algos::awac_mcep_loss(f.gauss, f.critics, f.batch, lambda_e, f.noise).loss),
                  central_differences(
                      [&] {
                        const auto h = f.gauss.head(Var::constant(f.batch.states), nn::GradMode::Frozen);
                        const Matrix a_hat = h.sample(f.noise).first.value();
                        return -(f.critics.min_q(f.batch.states, a_hat) - baseline).mean() -
                               lambda_e * h.log_prob(f.batch.actions).value().mean();
                      },
                      f.gauss.net.parameters())));
  }
  const double t = seconds_since(t0);
  const double worst = std::max({td3bc, td3bc_e, awac, mcep});
  return {worst < 1e-4 && t < 60.0,
          fmt("max rel error td3bc %.1e, td3bc-mcep %.1e, awac %.1e, awac-mcep %.1e; %.1fs", td3bc,
              td3bc_e, awac, mcep, t)};
}

Outcome normalizer_invariance() {
  double worst_value = 0.0, worst_grad = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Fixture f(2000 + i);
    f.det.net.zero_grad();
    const Var s = Var::constant(f.batch.states);
    nn::backward(nn::mean(nn::row_sum(nn::square(f.det.act_var(s, nn::GradMode::Track) -
                                                 Var::constant(f.batch.actions)))));
    const Matrix g_bc = grads_of(f.det.net.parameters());
    for (double alpha : {2.5, 10.0}) {
      const auto base = algos::td3bc_actor_loss(f.det, f.critics.q1, f.batch, alpha);
      const double q_base = base.q_term;
      const Matrix g_base = backprop(f.det, base.loss) - g_bc;
      for (double c : {0.1, 7.0, 100.0}) {
        const auto scaled = algos::td3bc_actor_loss(f.det, algos::scaled_critic(f.critics.q1, c), f.batch, alpha);
        const Matrix g = backprop(f.det, scaled.loss) - g_bc;
        worst_value = std::max(worst_value, std::abs(scaled.q_term - q_base) / std::abs(q_base));
        worst_grad = std::max(worst_grad, (g - g_base).norm() / g_base.norm());
      }
    }
  }
  return {worst_value < 1e-9 && worst_grad < 1e-9,
          fmt("max relative change: Q-term %.1e, Q-term gradient %.1e", worst_value, worst_grad)};
}

Outcome stop_gradient_contracts() {
  double critic_grad = 0.0;
  double min_rel = std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < 20; ++i) {
    Fixture f(3000 + i);
    for (auto* p : f.critics.online_parameters()) p->zero_grad();
    nn::backward(algos::awac_actor_loss(f.gauss, f.critics, f.batch, 1.0, nn::GradMode::Track).loss);
    for (auto* p : f.critics.online_parameters()) critic_grad = std::max(critic_grad, p->grad().cwiseAbs().maxCoeff());

    const Matrix through = backprop(f.gauss, algos::awac_mcep_loss(f.gauss, f.critics, f.batch, 0.6, f.noise, false).loss);
    const Matrix stopped = backprop(f.gauss, algos::awac_mcep_loss(f.gauss, f.critics, f.batch, 0.6, f.noise, true).loss);
    min_rel = std::min(min_rel, (through - stopped).norm() / stopped.norm());
  }
  return {critic_grad == 0.0 && min_rel > 1e-3,
          fmt("max |dL_awac/dtheta_Q| %.1e; min relative gap with vs without sample gradient %.3f",
              critic_grad, min_rel)};
}

Outcome non_interference() {
  const auto& d = pointmass_recipes().medium;
  bool ok = true;
  std::string detail;
  for (auto algo : {algos::Algorithm::Td3bc, algos::Algorithm::Awac}) {
    algos::TrainConfig cfg;
    cfg.algorithm = algo;
    cfg.hidden = {64, 64};
    cfg.steps = 5000;
    cfg.seed = 17;
    cfg.checkpoint_interval = 1;
    if (algo == algos::Algorithm::Awac) {
      cfg.lr_actor = 3e-5;
      cfg.lr_actor_e = 3e-5;
    }
    std::vector<std::vector<std::uint64_t>> prints(2);
    std::vector<algos::TrainArtifacts> runs;
    for (int on = 0; on < 2; ++on) {
      cfg.mcep_enabled = on == 1;
      runs.push_back(algos::train(cfg, d, [&](std::size_t, const algos::TrainArtifacts& a) {
        prints[on].push_back(fingerprint(a));
      }));
    }
    const bool same = prints[0].size() == cfg.steps && prints[0] == prints[1] &&
                      runs[0].critics.q1.same_values(runs[1].critics.q1) &&
                      runs[0].critics.q2.same_values(runs[1].critics.q2) &&
                      runs[0].critics.q1_target.same_values(runs[1].critics.q1_target) &&
                      runs[0].critics.q2_target.same_values(runs[1].critics.q2_target) &&
                      runs[0].target_policy.net.same_values(runs[1].target_policy.net) &&
                      runs[1].eval_policy.has_value();
    ok = ok && same;
    detail += fmt("%s%s: %zu/%zu steps identical", detail.empty() ? "" : "; ", algos::to_string(algo),
                  same ? prints[0].size() : std::size_t{0}, cfg.steps);
  }
  return {ok, detail};
}

Outcome mcep_improvement(std::vector<algos::TrainArtifacts>* keep) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& r = pointmass_recipes();
  int wins = 0;
  std::string detail = fmt("medium score %.1f;", r.medium_score);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    algos::TrainConfig cfg;
    cfg.steps = 20000;
    cfg.hidden = {64, 64};
    cfg.seed = seed;
    cfg.alpha_tilde = 2.5;
    cfg.alpha_e = 10.0;
    auto art = algos::train(cfg, r.medium);
    mdp::PointMassEnv env;
    Rng rng_t(100 + seed), rng_e(100 + seed);
    const eval::SelectionConfig sel;
    const auto ret_t = eval::evaluate(env, eval::Agent::target(art), 50, sel, rng_t);
    const auto ret_e = eval::evaluate(env, eval::Agent::evaluation(art), 50, sel, rng_e);
    const double q_t = eval::q_diff_diagnostic(eval::Agent::target(art), r.medium).mean;
    const double q_e = eval::q_diff_diagnostic(eval::Agent::evaluation(art), r.medium).mean;
    const bool win = !art.diverged && ret_e.mean_return >= ret_t.mean_return && q_e >= q_t;
    wins += win;
    detail += fmt(" seed %d return %.1f vs %.1f, qdiff %.2f vs %.2f%s", static_cast<int>(seed),
                  ret_e.mean_return, ret_t.mean_return, q_e, q_t, win ? "" : " (lost)");
    if (keep && seed == 0) keep->push_back(std::move(art));
  }
  const double t = seconds_since(t0);
  return {wins >= 4 && t < 1200.0, detail + fmt("; %d/5 seeds; %.0fs", wins, t)};
}

Outcome sweep_shape() {
  const auto maze = default_maze();
  Rng rng(0);
  const auto d = data::maze_recipe(maze, rng, {99, 1, 100});
  auto inst = algos::over_bootstrap_instance(*maze, d, algos::default_overbootstrap_region(*maze, 2),
                                             algos::kOverBootstrapDelta);
  algos::TrainConfig base;
  base.algorithm = algos::Algorithm::TabularKl;
  base.tabular_strength = algos::TabularStrength::QWeight;
  base.mcep_enabled = false;
  base.gamma = maze->mdp.discount();
  base.lr_critic = 1.0;
  base.lr_actor = 0.5;
  base.eta = 0.05;
  base.steps = 30000;
  base.batch_size = 0;
  base.policy_delay = 1;

  eval::SweepSpec spec;
  spec.parameter = "alpha_tilde";
  spec.grid = {2.5, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  spec.seeds = {0, 1, 2, 3, 4};
  spec.threads = std::max(1u, std::thread::hardware_concurrency());
  spec.features = inst.features;
  const auto report = eval::constraint_sweep(base, spec, inst.dataset, mdp::MazeEnv(maze));

  std::string pattern;
  double last = -1.0;
  for (const auto& c : report.cells) {
    if (c.strength != last) pattern += fmt(" %g:", c.strength);
    pattern += c.diverged ? "x" : ".";
    last = c.strength;
  }
  const auto edge = report.safe_edge();
  const auto first = report.first_all_diverged();
  return {report.monotone_frontier() && first.has_value(),
          fmt("safe edge %s, all seeds diverge from %s; diverged per seed:%s",
              edge ? fmt("%g", *edge).c_str() : "none", first ? fmt("%g", *first).c_str() : "none",
              pattern.c_str())};
}

Outcome action_selection() {
  Rng rng(9);
  eval::Agent agent;
  agent.policy = algos::Policy::make(algos::PolicyKind::Deterministic, 4, 2, {32, 32}, nn::Activation::Relu, rng, "pi");
  for (auto* p : agent.policy.net.parameters()) p->mutable_value() = random_matrix(p->value().rows(), p->value().cols(), rng, 0.5);
  agent.critics = algos::CriticPair::make(4, 2, {32, 32}, nn::Activation::Relu, rng);

  // Candidate sets as scored at deployment: min(Q1, Q2) of perturbed policy actions.
  const int sets = 10000;
  const std::size_t n = 50;
  int agree = 0;
  for (int k = 0; k < sets; ++k) {
    const Matrix s = random_matrix(1, 4, rng, 2.0);
    const Matrix a0 = agent.policy.act(s);
    Matrix states = s.replicate(static_cast<Eigen::Index>(n), 1);
    Matrix cands = a0.replicate(static_cast<Eigen::Index>(n), 1) + 0.05 * nn::standard_normal(static_cast<Eigen::Index>(n), 2, rng);
    cands = cands.cwiseMax(-1.0).cwiseMin(1.0);
    const Matrix q = agent.critics->min_q(states, cands);
    const std::vector<double> scores(q.data(), q.data() + q.size());
    agree += eval::select_index(scores, eval::SelectionMode::Softmax, 1e-9, rng) ==
             eval::select_index(scores, eval::SelectionMode::Argmax, 1.0, rng);
  }

  eval::SelectionConfig cfg;
  cfg.mode = eval::SelectionMode::Argmax;
  cfg.noise_std = 0.0;
  int exact = 0;
  const int probes = 1000;
  for (int k = 0; k < probes; ++k) {
    const Matrix s = random_matrix(1, 4, rng, 2.0);
    const std::vector<double> obs(s.data(), s.data() + 4);
    const auto a = eval::select_action(agent, obs, cfg, rng);
    const Matrix plain = agent.policy.act(agent.observe(obs));
    exact += a[0] == plain(0, 0) && a[1] == plain(0, 1);
  }
  const double rate = agree / static_cast<double>(sets);
  return {rate >= 0.999 && exact == probes,
          fmt("softmax(T=1e-9) = argmax on %d/%d sets; noiseless argmax = policy on %d/%d states", agree,
              sets, exact, probes)};
}

Outcome serialization(const std::vector<algos::TrainArtifacts>& trained) {
  const fs::path dir = fs::temp_directory_path() / ("mcep_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto& r = pointmass_recipes();

  bool data_ok = true;
  for (const auto* d : {&r.medium, &r.random, &r.medium_replay}) {
    const std::string bytes = to_bytes(*d);
    std::istringstream in(bytes);
    const data::Dataset back = data::load(in);
    data_ok = data_ok && to_bytes(back) == bytes && back.states == d->states && back.actions == d->actions &&
              back.rewards == d->rewards && back.next_states == d->next_states &&
              back.dones == d->dones && back.timeouts == d->timeouts;
  }
  const std::string path = (dir / "medium.mcds").string();
  data::save(r.medium, path);
  data_ok = data_ok && to_bytes(data::load(path)) == to_bytes(r.medium);

  bool ckpt_ok = !trained.empty();
  std::size_t n_ckpt = 0;
  for (const auto& art : trained) {
    std::vector<nn::Checkpoint> cks{art.policy_checkpoint(art.target_policy), art.critic_checkpoint(art.critics.q1),
                                    art.critic_checkpoint(art.critics.q2)};
    if (art.eval_policy) cks.push_back(art.policy_checkpoint(*art.eval_policy));
    for (const auto& c : cks) {
      const std::string bytes = to_bytes(c);
      std::istringstream in(bytes);
      const nn::Checkpoint back = nn::load_checkpoint(in);
      ckpt_ok = ckpt_ok && to_bytes(back) == bytes && back.net.same_values(c.net);
      ++n_ckpt;
    }
  }

  const std::vector<std::string> files{"manifest.json", "policy_target.ckpt", "policy_eval.ckpt", "q1.ckpt",
                                       "q2.ckpt"};
  bool runs_ok = true;
  for (const char* algo : {"td3bc", "awac"}) {
    const std::vector<std::string> args{"output.dir=" + (dir / algo).string(), "data.path=" + path,
                                        std::string("train.algorithm=") + algo, "train.steps=300",
                                        "train.hidden=32,32", "seed=3"};
    std::vector<std::string> first;
    for (int rep = 0; rep < 2; ++rep) {
      std::ostringstream out, err;
      runs_ok = runs_ok && cli::run("train", "", args, out, err) == cli::kExitOk;
      for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string bytes = slurp(dir / algo / files[i]);
        runs_ok = runs_ok && !bytes.empty();
        if (rep == 0) {
          first.push_back(bytes);
        } else {
          runs_ok = runs_ok && bytes == first[i];
        }
      }
    }
  }
  fs::remove_all(dir);
  return {data_ok && ckpt_ok && runs_ok,
          fmt("dataset round-trips %s, %zu checkpoint round-trips %s, repeated train runs %s",
              data_ok ? "identical" : "DIFFER", n_ckpt, ckpt_ok ? "identical" : "DIFFER",
              runs_ok ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  std::vector<algos::TrainArtifacts> trained;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"maze greedy recovery", maze_recovery},
      {"dp oracle consistency", dp_consistency},
      {"actor loss gradients", gradient_suite},
      {"q normaliser invariance", normalizer_invariance},
      {"stop-gradient contracts", stop_gradient_contracts},
      {"evaluation policy non-interference", non_interference},
      {"evaluation policy improvement", [&] { return mcep_improvement(&trained); }},
      {"divergence frontier monotone", sweep_shape},
      {"action selection", action_selection},
      {"serialization and determinism", [&] { return serialization(trained); }},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << index << ". " << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
