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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "mcep/eval.hpp"
#include "mcep/recipes.hpp"

namespace mcep::eval {
namespace {

using nn::Matrix;

std::shared_ptr<const mdp::Maze> shared_maze() {
  static const auto m = std::make_shared<const mdp::Maze>(mdp::build_maze(mdp::default_maze_spec()));
  return m;
}

// Q(s, a) = sum_j w_j a_j.
nn::Mlp linear_action_critic(std::size_t sd, const std::vector<double>& w) {
  Matrix weights = Matrix::Zero(static_cast<Eigen::Index>(sd + w.size()), 1);
  for (std::size_t j = 0; j < w.size(); ++j) weights(static_cast<Eigen::Index>(sd + j), 0) = w[j];
  std::vector<nn::Layer> layers{{nn::Parameter(weights, "q.w"), nn::Parameter(Matrix::Zero(1, 1), "q.b")}};
  return nn::Mlp(std::move(layers), nn::Activation::Identity);
}

Agent linear_agent(std::size_t sd, const std::vector<double>& w, Rng& rng) {
  Agent agent;
  agent.policy = algos::Policy::make(algos::PolicyKind::Deterministic, sd, w.size(), {8},
                                     nn::Activation::Tanh, rng, "pi");
  algos::CriticPair c;
  c.q1 = linear_action_critic(sd, w);
  c.q2 = c.q1;
  c.q1_target = c.q1;
  c.q2_target = c.q1;
  agent.critics = c;
  return agent;
}

TEST(Softmax, UniformOnTiesAndShiftInvariant) {
  const double tied[] = {2.0, 2.0, 2.0, 2.0};
  for (double p : softmax_probabilities(tied, 0.7)) EXPECT_DOUBLE_EQ(p, 0.25);
  const double scores[] = {0.1, -1.0, 3.0};
  const double shifted[] = {1000.1, 999.0, 1003.0};
  const auto a = softmax_probabilities(scores, 0.5);
  const auto b = softmax_probabilities(shifted, 0.5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-15);
  EXPECT_NEAR(a[2] / a[0], std::exp((3.0 - 0.1) / 0.5), 1e-9);
  EXPECT_THROW(softmax_probabilities(scores, 0.0), ValidationError);
}

TEST(Softmax, DrawFrequenciesFollowProbabilities) {
  const double scores[] = {0.0, std::log(3.0)};
  Rng rng(1);
  int ones = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) ones += select_index(scores, SelectionMode::Softmax, 1.0, rng) == 1;
  const double se = std::sqrt(0.75 * 0.25 / n);
  EXPECT_NEAR(ones / static_cast<double>(n), 0.75, 4 * se);
}

TEST(Softmax, TinyTemperatureAgreesWithArgmax) {
  Rng rng(2);
  int agree = 0;
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> scores(20);
    for (double& s : scores) s = rng.normal();
    agree += select_index(scores, SelectionMode::Softmax, 1e-6, rng) ==
             select_index(scores, SelectionMode::Argmax, 1.0, rng);
  }
  EXPECT_GE(agree, 1998);
}

TEST(Argmax, LowestIndexWinsTies) {
  Rng rng(3);
  const double scores[] = {1.0, 5.0, 5.0, -2.0};
  EXPECT_EQ(select_index(scores, SelectionMode::Argmax, 1.0, rng), 1u);
}

TEST(SelectAction, NoneReturnsThePolicyOutput) {
  Rng rng(4);
  const Agent agent = linear_agent(3, {1.0, -1.0}, rng);
  const std::vector<double> obs{0.3, -0.2, 0.9};
  SelectionConfig cfg;
  const auto a = select_action(agent, obs, cfg, rng);
  const Matrix expected = agent.policy.act(agent.observe(obs));
  EXPECT_EQ(a[0], expected(0, 0));
  EXPECT_EQ(a[1], expected(0, 1));
}

TEST(SelectAction, SingleNoiselessCandidateEqualsPolicy) {
  Rng rng(5);
  const Agent agent = linear_agent(3, {1.0, -1.0}, rng);
  const std::vector<double> obs{0.3, -0.2, 0.9};
  SelectionConfig cfg;
  cfg.mode = SelectionMode::Argmax;
  cfg.noise_std = 0.0;
  cfg.n_samples = 7;
  const Matrix expected = agent.policy.act(agent.observe(obs));
  for (auto mode : {SelectionMode::Argmax, SelectionMode::Softmax}) {
    cfg.mode = mode;
    const auto a = select_action(agent, obs, cfg, rng);
    EXPECT_EQ(a[0], expected(0, 0));
    EXPECT_EQ(a[1], expected(0, 1));
  }
}

TEST(SelectAction, ArgmaxPicksTheBestClippedCandidate) {
  Rng rng(6);
  const Agent agent = linear_agent(2, {1.0}, rng);
  SelectionConfig cfg;
  cfg.mode = SelectionMode::Argmax;
  cfg.noise_std = 5.0;
  cfg.n_samples = 64;
  const std::vector<double> obs{0.1, 0.2};
  // With huge noise some candidate clips to +1, which maximises Q = a.
  EXPECT_EQ(select_action(agent, obs, cfg, rng)[0], 1.0);
  Agent no_critic = agent;
  no_critic.critics.reset();
  EXPECT_THROW(select_action(no_critic, obs, cfg, rng), ContractViolation);
}

TEST(Agent, ObserveAppliesNormaliser) {
  Agent agent;
  agent.state_mean = {1.0, -2.0};
  agent.state_std = {2.0, 0.5};
  const std::vector<double> raw{3.0, -1.0};
  const Matrix s = agent.observe(raw);
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s(0, 1), 2.0);
}

TEST(Evaluate, DeterministicSetupHasZeroStdError) {
  auto spec = mdp::default_maze_spec();
  spec.slip_prob = 0.0;
  const auto maze = std::make_shared<const mdp::Maze>(mdp::build_maze(spec));
  mdp::MazeEnv env(maze);
  const auto pi = dp::greedy_policy(dp::value_iteration(maze->mdp).q);
  Rng rng(7);
  const auto r = evaluate(env, tabular_actor(pi), 25, rng);
  EXPECT_EQ(r.episodes, 25u);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.mean_return, spec.goal_reward);
}

TEST(Evaluate, MazeRolloutsMatchExactReturn) {
  const auto maze = shared_maze();
  mdp::MazeEnv env(maze, 1000);
  const auto sol = dp::value_iteration(maze->mdp);
  const auto pi = dp::greedy_policy(sol.q);
  const double exact = dp::policy_return(maze->mdp, pi);
  Rng rng(8);
  const auto r = evaluate(env, tabular_actor(pi), 1000, rng, maze->mdp.discount());
  EXPECT_NEAR(r.mean_return, exact, 2.0 * r.std_error + 1e-12);
}

TEST(Evaluate, StdErrorShrinksWithEpisodes) {
  const auto maze = shared_maze();
  mdp::MazeEnv env(maze, 1000);
  const auto pi = dp::greedy_policy(dp::value_iteration(maze->mdp).q);
  Rng a(9);
  Rng b(10);
  const auto small = evaluate(env, tabular_actor(pi), 100, a, 0.95);
  const auto large = evaluate(env, tabular_actor(pi), 1600, b, 0.95);
  ASSERT_GT(large.std_error, 0.0);
  EXPECT_NEAR(small.std_error / large.std_error, 4.0, 1.0);
}

TEST(Evaluate, RejectsZeroEpisodes) {
  mdp::PointMassEnv env;
  Rng rng(1);
  const data::ActionFn still = [](const std::vector<double>&, Rng&) {
    return std::vector<double>{0.0, 0.0};
  };
  EXPECT_THROW(evaluate(env, still, 0, rng), ValidationError);
}

TEST(Normalize, AnchorsMapToZeroAndHundred) {
  EXPECT_EQ(normalized_return(-5.0, -5.0, 15.0), 0.0);
  EXPECT_EQ(normalized_return(15.0, -5.0, 15.0), 100.0);
  EXPECT_EQ(normalized_return(5.0, -5.0, 15.0), 50.0);
  EXPECT_THROW(normalized_return(1.0, 2.0, 2.0), ValidationError);
  EXPECT_THROW(normalized_return(1.0, 3.0, 2.0), ValidationError);
}

TEST(QDiff, ZeroWhenPolicyMatchesData) {
  const auto maze = shared_maze();
  mdp::MazeEnv env(maze);
  const auto sol = dp::value_iteration(maze->mdp);
  const auto greedy = dp::greedy_policy(sol.q);
  Rng rng(11);
  const auto d = data::collect(env, eval::tabular_actor(greedy), 10, 100, rng);
  const auto r = q_diff_diagnostic(sol.q, greedy, d);
  EXPECT_EQ(r.min, 0.0);
  EXPECT_EQ(r.max, 0.0);
}

TEST(QDiff, GreedyPolicyNeverBelowDataActions) {
  const auto maze = shared_maze();
  Rng rng(12);
  const auto d = data::maze_recipe(maze, rng);
  const auto sol = dp::value_iteration(maze->mdp);
  const auto greedy = q_diff_diagnostic(sol.q, dp::greedy_policy(sol.q), d);
  EXPECT_GE(greedy.min, 0.0);
  const auto uniform = q_diff_diagnostic(
      sol.q, dp::TabularPolicy::uniform(maze->mdp.n_states(), maze->mdp.n_actions()), d);
  EXPECT_LT(uniform.mean, greedy.mean);
}

TEST(QDiff, NeuralFormUsesMinOfCritics) {
  Rng rng(13);
  Agent agent = linear_agent(2, {2.0}, rng);
  agent.critics->q2 = linear_action_critic(2, {1.0});
  data::Dataset d;
  d.meta.state_dim = 2;
  d.meta.action_dim = 1;
  const double s[2] = {0.0, 0.0};
  const double a[1] = {-0.5};
  d.push(s, a, 0.0, s, true, false);
  const auto r = q_diff_diagnostic(agent, d);
  const double pi = agent.policy.act(Matrix::Zero(1, 2))(0, 0);
  const double expected = std::min(2.0 * pi, pi) - std::min(2.0 * -0.5, -0.5);
  EXPECT_NEAR(r.values[0], expected, 1e-12);
}

TEST(QDiff, SummaryQuantilesAndHistogram) {
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i);
  const auto r = summarize_qdiff(v, 10);
  EXPECT_EQ(r.mean, 50.0);
  EXPECT_EQ(r.quantiles[2].second, 50.0);
  EXPECT_EQ(r.quantiles[0].second, 5.0);
  std::size_t total = 0;
  for (auto c : r.histogram_counts) total += c;
  EXPECT_EQ(total, 101u);
  EXPECT_EQ(r.histogram_counts.back(), 11u);
  EXPECT_THROW(summarize_qdiff({}), ValidationError);
}

SweepReport report_of(std::vector<std::tuple<double, bool>> cells) {
  SweepReport r;
  for (const auto& [s, div] : cells) r.cells.push_back({s, 0, div, div ? NAN : 1.0, div ? NAN : 2.0});
  return r;
}

TEST(SweepReport, EdgesAndMonotoneFrontier) {
  const auto r = report_of({{1, false}, {1, false}, {2, false}, {2, true}, {4, true}, {4, true}});
  EXPECT_EQ(r.safe_edge(), 1.0);
  EXPECT_EQ(r.first_all_diverged(), 4.0);
  EXPECT_EQ(r.improvement_edge(), 2.0);
  EXPECT_TRUE(r.monotone_frontier());
  const auto broken = report_of({{1, true}, {2, false}});
  EXPECT_FALSE(broken.monotone_frontier());
  EXPECT_FALSE(broken.safe_edge().has_value());
  const auto calm = report_of({{1, false}, {2, false}});
  EXPECT_FALSE(calm.first_all_diverged().has_value());
  EXPECT_TRUE(calm.monotone_frontier());
}

TEST(Sweep, SinglePointGridAndThreadDeterminism) {
  const auto maze = shared_maze();
  Rng rng(0);
  const auto d = data::maze_recipe(maze, rng);
  mdp::MazeEnv env(maze);
  algos::TrainConfig c;
  c.algorithm = algos::Algorithm::TabularKl;
  c.steps = 200;
  c.batch_size = 0;
  c.lr_critic = 1.0;
  c.lr_actor = 0.5;
  c.lr_actor_e = 0.5;
  c.gamma = 0.95;
  SweepSpec spec;
  spec.parameter = "kl_weight";
  spec.grid = {1.0};
  spec.seeds = {0};
  const auto one = constraint_sweep(c, spec, d, env);
  ASSERT_EQ(one.cells.size(), 1u);
  EXPECT_FALSE(one.cells[0].diverged);

  spec.grid = {2.0, 0.5, 1.0};
  spec.seeds = {0, 1};
  const auto serial = constraint_sweep(c, spec, d, env);
  spec.threads = 3;
  const auto threaded = constraint_sweep(c, spec, d, env);
  ASSERT_EQ(serial.cells.size(), 6u);
  EXPECT_EQ(serial.cells.front().strength, 0.5);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(serial.cells[i].strength, threaded.cells[i].strength);
    EXPECT_EQ(serial.cells[i].return_target, threaded.cells[i].return_target);
    EXPECT_EQ(serial.cells[i].return_eval, threaded.cells[i].return_eval);
  }
  spec.parameter = "bogus";
  EXPECT_THROW(constraint_sweep(c, spec, d, env), ValidationError);
}

}  // namespace
}  // namespace mcep::eval
