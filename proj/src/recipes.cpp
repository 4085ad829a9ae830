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

#include "mcep/recipes.hpp"

#include <cmath>
#include <limits>

#include "mcep/eval.hpp"

namespace mcep::data {

namespace {

BehaviorSpec behavior(BehaviorKind kind) {
  BehaviorSpec b;
  b.kind = kind;
  return b;
}

}  // namespace

Dataset maze_recipe(const std::shared_ptr<const mdp::Maze>& maze, Rng& rng,
                    const MazeRecipeConfig& cfg) {
  mdp::MazeEnv env(maze, cfg.horizon);
  Dataset random = collect(env, behavior(BehaviorKind::UniformRandom), cfg.n_random,
                           cfg.horizon, rng);
  Dataset expert = collect(env, behavior(BehaviorKind::ExpertTabular), cfg.n_expert,
                           cfg.horizon, rng);
  Dataset d = concat(random, expert);
  d.meta.recipe = "maze-random-expert";
  return d;
}

namespace {

nn::Checkpoint actor_checkpoint(const algos::Policy& p) {
  return nn::Checkpoint{p.net, p.head_kind(), {}, {}};
}

void tag(Dataset& d, const std::string& recipe, double random_score, double expert_score) {
  d.meta.recipe = recipe;
  d.meta.random_score = random_score;
  d.meta.expert_score = expert_score;
}

}  // namespace

PointMassRecipes build_pointmass_recipes(const PointMassRecipeConfig& cfg,
                                         const mdp::PointMassParams& params) {
  if (cfg.anchor_episodes == 0) throw ValidationError("anchor_episodes must be positive");
  if (!(cfg.medium_fraction > 0.0 && cfg.medium_fraction < 1.0)) {
    throw ValidationError("medium_fraction must lie in (0, 1)");
  }
  const Rng root(cfg.seed);
  mdp::PointMassEnv env(params);

  algos::OnlineTd3Config online = cfg.online;
  online.seed = root.split(1).next_u64();
  algos::OnlineTd3Result run = algos::train_online_td3(env, online);
  if (run.snapshots.empty()) throw ValidationError("online run produced no snapshots");

  PointMassRecipes out;
  {
    Rng rng = root.split(2);
    const ActionFn random = make_behavior(behavior(BehaviorKind::UniformRandom), env);
    out.random_score = eval::evaluate(env, random, cfg.anchor_episodes, rng).mean_return;
  }

  std::vector<double> scores;
  for (const auto& [step, policy] : run.snapshots) {
    Rng rng = root.split(3);
    const ActionFn fn = checkpoint_actor(actor_checkpoint(policy));
    scores.push_back(eval::evaluate(env, fn, cfg.anchor_episodes, rng).mean_return);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  out.expert_score = scores[best];
  out.expert_step = run.snapshots[best].first;
  out.expert_policy = actor_checkpoint(run.snapshots[best].second);

  const double target = out.random_score + cfg.medium_fraction * (out.expert_score - out.random_score);
  std::size_t medium = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= best; ++i) {
    if (std::abs(scores[i] - target) < gap) {
      gap = std::abs(scores[i] - target);
      medium = i;
    }
  }
  out.medium_score = scores[medium];
  out.medium_step = run.snapshots[medium].first;
  out.medium_policy = actor_checkpoint(run.snapshots[medium].second);

  const int horizon = env.horizon();
  {
    Rng rng = root.split(4);
    out.random = collect(env, make_behavior(behavior(BehaviorKind::UniformRandom), env),
                         cfg.n_trajectories, horizon, rng);
  }
  {
    Rng rng = root.split(5);
    out.medium = collect(env, checkpoint_actor(out.medium_policy, cfg.medium_noise),
                         cfg.n_trajectories, horizon, rng);
  }
  {
    Rng rng = root.split(6);
    out.expert = collect(env, checkpoint_actor(out.expert_policy, cfg.expert_noise),
                         cfg.n_trajectories, horizon, rng);
  }
  out.medium_replay.meta = run.replay.meta;
  out.medium_replay.append_range(run.replay, 0, std::min(out.medium_step, run.replay.size()));
  if (!out.medium_replay.empty()) {
    // The cut may fall inside an episode; close it as a truncation.
    const std::size_t last = out.medium_replay.size() - 1;
    if (!out.medium_replay.episode_end(last)) out.medium_replay.timeouts[last] = 1.0f;
  }

  tag(out.random, "random", out.random_score, out.expert_score);
  tag(out.medium, "medium", out.random_score, out.expert_score);
  tag(out.expert, "expert", out.random_score, out.expert_score);
  tag(out.medium_replay, "medium-replay", out.random_score, out.expert_score);
  out.medium_expert = mix(out.medium, out.expert, 0.5);
  tag(out.medium_expert, "medium-expert", out.random_score, out.expert_score);
  return out;
}

}  // namespace mcep::data
