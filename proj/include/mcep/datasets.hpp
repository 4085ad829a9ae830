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
#include <string>
#include <utility>
#include <vector>

#include "mcep/dp.hpp"
#include "mcep/mdp.hpp"
#include "mcep/nn.hpp"

namespace mcep::data {

struct DatasetMeta {
  std::string env_id;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::string recipe;
  bool normalized = false;
  std::vector<double> state_mean;  ///< filled by normalize_states
  std::vector<double> state_std;   ///< std + eps actually divided by
  /// Normalised-return anchors measured for the environment, when known.
  std::optional<double> random_score;
  std::optional<double> expert_score;

  bool operator==(const DatasetMeta&) const = default;
};

/// Columnar transition store. Columns are float32, matching the file format,
/// so save/load is lossless. `timeouts` marks horizon truncation: such
/// transitions end a trajectory but keep done = 0 for bootstrapping.
struct Dataset {
  DatasetMeta meta;
  std::vector<float> states;       ///< N x state_dim
  std::vector<float> actions;      ///< N x action_dim
  std::vector<float> rewards;      ///< N
  std::vector<float> next_states;  ///< N x state_dim
  std::vector<float> dones;        ///< N, 1 on true termination
  std::vector<float> timeouts;     ///< N, 1 on truncation

  std::size_t size() const { return rewards.size(); }
  bool empty() const { return rewards.empty(); }
  bool episode_end(std::size_t i) const { return dones[i] != 0.0f || timeouts[i] != 0.0f; }

  void push(std::span<const double> s, std::span<const double> a, double r,
            std::span<const double> next, bool done, bool timeout);
  /// Half-open [begin, end) index ranges of the trajectories, in order.
  std::vector<std::pair<std::size_t, std::size_t>> trajectories() const;
  /// Appends the transitions [begin, end) of `other`.
  void append_range(const Dataset& other, std::size_t begin, std::size_t end);

  /// Column lengths, dimensions and the trajectory-boundary property.
  /// Throws ValidationError.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Behaviour policies

enum class BehaviorKind { UniformRandom, ExpertTabular, CheckpointPolicy, EpsilonMix };
const char* to_string(BehaviorKind kind);
BehaviorKind behavior_kind_from_string(const std::string& s);

struct BehaviorSpec {
  BehaviorKind kind = BehaviorKind::UniformRandom;
  std::string checkpoint_path;  ///< checkpoint_policy, and epsilon_mix on continuous envs
  double epsilon = 0.0;         ///< epsilon_mix: probability of a uniform action
  double noise_std = 0.0;       ///< Gaussian action noise for checkpoint policies

  void validate() const;
};

/// obs -> action, consuming randomness from the supplied stream.
using ActionFn = std::function<std::vector<double>(const std::vector<double>&, Rng&)>;

/// Builds the behaviour for `env`. Expert tabular behaviour on a maze is the
/// greedy policy of value iteration. Throws DataError when a checkpoint is missing.
ActionFn make_behavior(const BehaviorSpec& spec, const mdp::Environment& env);

/// Acts with a deterministic actor checkpoint, applying its stored input normaliser.
ActionFn checkpoint_actor(const nn::Checkpoint& ckpt, double noise_std = 0.0);

/// Rolls out `n_trajectories` episodes truncated at `horizon`.
Dataset collect(mdp::Environment& env, const ActionFn& behavior, std::size_t n_trajectories,
                int horizon, Rng& rng, const std::string& recipe = "custom");
Dataset collect(mdp::Environment& env, const BehaviorSpec& behavior, std::size_t n_trajectories,
                int horizon, Rng& rng);

/// Concatenates whole datasets (same env and dims).
Dataset concat(const Dataset& a, const Dataset& b);

/// Interleaves whole trajectories of `a` and `b` so that the share of samples
/// from `a` approximates `ratio`. As many samples as the ratio allows are kept;
/// when `ratio` equals a's natural share every transition of both is kept.
Dataset mix(const Dataset& a, const Dataset& b, double ratio);

struct NormalizedDataset {
  Dataset data;
  std::vector<double> mean;
  std::vector<double> std;  ///< population std, before eps
};

inline constexpr double kDefaultNormEps = 1e-3;

/// (x - mean) / (std + eps) applied to states and next_states; statistics from states.
NormalizedDataset normalize_states(const Dataset& d, double eps = kDefaultNormEps);

struct DatasetStats {
  std::size_t trajectories = 0;
  std::size_t samples = 0;
  double mean_return = 0.0;
  double min_return = 0.0;
  double max_return = 0.0;
  std::vector<double> returns;  ///< undiscounted, per trajectory
};

DatasetStats stats(const Dataset& d);
std::string stats_json(const DatasetStats& s, const DatasetMeta& meta);

// ---------------------------------------------------------------------------
// File format: "MCDS", u32 version, u32 metadata length, UTF-8 JSON metadata,
// u64 sample count, little-endian f32 columns (states, actions, rewards,
// next_states, dones, timeouts), u32 CRC32 of every preceding byte.

inline constexpr std::uint32_t kDatasetVersion = 1;

void save(const Dataset& d, std::ostream& out);
Dataset load(std::istream& in);
void save(const Dataset& d, const std::string& path);
Dataset load(const std::string& path);

std::string meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const std::string& text);

// ---------------------------------------------------------------------------

struct Batch {
  nn::Matrix states;
  nn::Matrix actions;
  nn::Matrix rewards;  ///< N x 1
  nn::Matrix next_states;
  nn::Matrix dones;  ///< N x 1
};

/// Uniform sampling with replacement.
Batch sample_batch(const Dataset& d, std::size_t n, Rng& rng);
/// Every transition in order.
Batch full_batch(const Dataset& d);
Batch gather(const Dataset& d, std::span<const std::size_t> indices);

}  // namespace mcep::data
