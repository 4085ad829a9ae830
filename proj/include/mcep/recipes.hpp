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
#include <memory>

#include "mcep/algos.hpp"
#include "mcep/datasets.hpp"
#include "mcep/mdp.hpp"
#include "mcep/nn.hpp"

namespace mcep::data {

struct MazeRecipeConfig {
  std::size_t n_random = 99;
  std::size_t n_expert = 1;
  int horizon = 100;
};

/// Uniform-random trajectories followed by expert ones, concatenated.
Dataset maze_recipe(const std::shared_ptr<const mdp::Maze>& maze, Rng& rng,
                    const MazeRecipeConfig& cfg = {});

struct PointMassRecipeConfig {
  algos::OnlineTd3Config online;
  std::size_t n_trajectories = 100;
  /// The medium policy is the snapshot whose normalised score is closest to
  /// 100 * medium_fraction.
  double medium_fraction = 0.5;
  double medium_noise = 0.5;  ///< Gaussian action noise when rolling out the medium policy
  double expert_noise = 0.0;
  std::size_t anchor_episodes = 50;
  std::uint64_t seed = 0;
};

struct PointMassRecipes {
  Dataset random;
  Dataset medium;
  Dataset medium_replay;  ///< the online replay buffer up to the medium snapshot
  Dataset medium_expert;  ///< 50/50 trajectory mixture of medium and expert
  Dataset expert;
  nn::Checkpoint medium_policy;
  nn::Checkpoint expert_policy;
  double random_score = 0.0;  ///< uniform-random anchor
  double expert_score = 0.0;  ///< best snapshot anchor
  double medium_score = 0.0;
  std::size_t medium_step = 0;
  std::size_t expert_step = 0;
};

/// Trains TD3 online on the point mass, measures the anchors and rolls out the
/// data recipes. Every dataset carries the anchors in its metadata.
PointMassRecipes build_pointmass_recipes(const PointMassRecipeConfig& cfg,
                                         const mdp::PointMassParams& params = {});

}  // namespace mcep::data
