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

#include "mcep/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "binary_io.hpp"

namespace mcep::data {

using nlohmann::json;

void Dataset::push(std::span<const double> s, std::span<const double> a, double r,
                   std::span<const double> next, bool done, bool timeout) {
  if (s.size() != meta.state_dim || next.size() != meta.state_dim ||
      a.size() != meta.action_dim) {
    throw ValidationError("Dataset::push: transition dims do not match the dataset");
  }
  for (double v : s) states.push_back(static_cast<float>(v));
  for (double v : a) actions.push_back(static_cast<float>(v));
  rewards.push_back(static_cast<float>(r));
  for (double v : next) next_states.push_back(static_cast<float>(v));
  dones.push_back(done ? 1.0f : 0.0f);
  timeouts.push_back(timeout && !done ? 1.0f : 0.0f);
}

std::vector<std::pair<std::size_t, std::size_t>> Dataset::trajectories() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (episode_end(i)) {
      out.emplace_back(begin, i + 1);
      begin = i + 1;
    }
  }
  if (begin < size()) out.emplace_back(begin, size());
  return out;
}

void Dataset::append_range(const Dataset& other, std::size_t begin, std::size_t end) {
  const auto sd = meta.state_dim;
  const auto ad = meta.action_dim;
  states.insert(states.end(), other.states.begin() + begin * sd, other.states.begin() + end * sd);
  actions.insert(actions.end(), other.actions.begin() + begin * ad, other.actions.begin() + end * ad);
  rewards.insert(rewards.end(), other.rewards.begin() + begin, other.rewards.begin() + end);
  next_states.insert(next_states.end(), other.next_states.begin() + begin * sd,
                     other.next_states.begin() + end * sd);
  dones.insert(dones.end(), other.dones.begin() + begin, other.dones.begin() + end);
  timeouts.insert(timeouts.end(), other.timeouts.begin() + begin, other.timeouts.begin() + end);
}

void Dataset::validate() const {
  const auto n = size();
  if (states.size() != n * meta.state_dim || next_states.size() != n * meta.state_dim ||
      actions.size() != n * meta.action_dim || dones.size() != n || timeouts.size() != n) {
    throw ValidationError("dataset columns do not share length N = " + std::to_string(n));
  }
  const auto sd = meta.state_dim;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (episode_end(i)) continue;
    if (std::memcmp(&next_states[i * sd], &states[(i + 1) * sd], sd * sizeof(float)) != 0) {
      throw ValidationError("transition " + std::to_string(i) +
                            " crosses a trajectory boundary without an end flag");
    }
  }
  if (n > 0 && !episode_end(n - 1)) {
    throw ValidationError("last transition does not close its trajectory");
  }
}

// ---------------------------------------------------------------------------

const char* to_string(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::UniformRandom: return "uniform_random";
    case BehaviorKind::ExpertTabular: return "expert_tabular";
    case BehaviorKind::CheckpointPolicy: return "checkpoint_policy";
    case BehaviorKind::EpsilonMix: return "epsilon_mix";
  }
  return "?";
}

BehaviorKind behavior_kind_from_string(const std::string& s) {
  if (s == "uniform_random") return BehaviorKind::UniformRandom;
  if (s == "expert_tabular") return BehaviorKind::ExpertTabular;
  if (s == "checkpoint_policy") return BehaviorKind::CheckpointPolicy;
  if (s == "epsilon_mix") return BehaviorKind::EpsilonMix;
  throw ValidationError("unknown behaviour kind '" + s + "'");
}

void BehaviorSpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
  if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be non-negative");
}

namespace {

ActionFn uniform_behavior(const mdp::Environment& env) {
  if (env.discrete()) {
    const auto n = env.n_actions();
    return [n](const std::vector<double>&, Rng& rng) {
      return std::vector<double>{static_cast<double>(rng.index(n))};
    };
  }
  const auto d = env.act_dim();
  return [d](const std::vector<double>&, Rng& rng) {
    std::vector<double> a(d);
    for (auto& x : a) x = rng.uniform(-1.0, 1.0);
    return a;
  };
}

ActionFn expert_tabular_behavior(const mdp::Environment& env) {
  const auto* maze_env = dynamic_cast<const mdp::MazeEnv*>(&env);
  if (!maze_env) throw ValidationError("expert_tabular behaviour needs a tabular environment");
  const auto solution = dp::value_iteration(maze_env->maze().mdp);
  auto policy = std::make_shared<dp::TabularPolicy>(dp::greedy_policy(solution.q));
  return [policy](const std::vector<double>& obs, Rng& rng) {
    return std::vector<double>{static_cast<double>(policy->sample(static_cast<std::size_t>(obs[0]), rng))};
  };
}

ActionFn load_checkpoint_behavior(const BehaviorSpec& spec) {
  if (spec.checkpoint_path.empty()) {
    throw DataError(DataError::Kind::Io, "behaviour checkpoint path is empty");
  }
  std::ifstream probe(spec.checkpoint_path, std::ios::binary);
  if (!probe) {
    throw DataError(DataError::Kind::Io,
                    "behaviour checkpoint '" + spec.checkpoint_path + "' is missing");
  }
  return checkpoint_actor(nn::load_checkpoint(probe), spec.noise_std);
}

}  // namespace

ActionFn checkpoint_actor(const nn::Checkpoint& ckpt, double noise_std) {
  auto shared = std::make_shared<nn::Checkpoint>(ckpt);
  return [shared, noise_std](const std::vector<double>& obs, Rng& rng) {
    nn::Matrix x(1, static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) {
      double v = obs[i];
      if (!shared->input_mean.empty()) v = (v - shared->input_mean[i]) / shared->input_std[i];
      x(0, static_cast<Eigen::Index>(i)) = v;
    }
    nn::Matrix out = shared->net.predict(x);
    const auto d = shared->head == nn::HeadKind::TanhGaussian ? out.cols() / 2 : out.cols();
    std::vector<double> a(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
      double v = std::tanh(out(0, j));
      if (noise_std > 0.0) v += noise_std * rng.normal();
      a[static_cast<std::size_t>(j)] = std::clamp(v, -1.0, 1.0);
    }
    return a;
  };
}

ActionFn make_behavior(const BehaviorSpec& spec, const mdp::Environment& env) {
  spec.validate();
  switch (spec.kind) {
    case BehaviorKind::UniformRandom: return uniform_behavior(env);
    case BehaviorKind::ExpertTabular: return expert_tabular_behavior(env);
    case BehaviorKind::CheckpointPolicy: return load_checkpoint_behavior(spec);
    case BehaviorKind::EpsilonMix: {
      auto random = uniform_behavior(env);
      auto base = spec.checkpoint_path.empty() ? expert_tabular_behavior(env)
                                               : load_checkpoint_behavior(spec);
      const double eps = spec.epsilon;
      return [random, base, eps](const std::vector<double>& obs, Rng& rng) {
        return rng.uniform() < eps ? random(obs, rng) : base(obs, rng);
      };
    }
  }
  throw ValidationError("unhandled behaviour kind");
}

Dataset collect(mdp::Environment& env, const ActionFn& behavior, std::size_t n_trajectories,
                int horizon, Rng& rng, const std::string& recipe) {
  if (horizon < 1) throw ValidationError("collect: horizon must be >= 1");
  Dataset d;
  d.meta.env_id = env.id();
  d.meta.state_dim = env.obs_dim();
  d.meta.action_dim = env.act_dim();
  d.meta.recipe = recipe;
  for (std::size_t t = 0; t < n_trajectories; ++t) {
    auto obs = env.reset(rng);
    for (int step = 0; step < horizon; ++step) {
      const auto action = behavior(obs, rng);
      const auto out = env.step(action, rng);
      const bool timeout = !out.terminal && step + 1 == horizon;
      d.push(obs, action, out.reward, out.observation, out.terminal, timeout);
      if (out.terminal) break;
      obs = out.observation;
    }
  }
  return d;
}

Dataset collect(mdp::Environment& env, const BehaviorSpec& behavior, std::size_t n_trajectories,
                int horizon, Rng& rng) {
  return collect(env, make_behavior(behavior, env), n_trajectories, horizon, rng,
                 to_string(behavior.kind));
}

namespace {
void check_compatible(const Dataset& a, const Dataset& b) {
  if (a.meta.env_id != b.meta.env_id || a.meta.state_dim != b.meta.state_dim ||
      a.meta.action_dim != b.meta.action_dim) {
    throw ValidationError("datasets have mismatched env ids or dimensions");
  }
  if (a.meta.normalized || b.meta.normalized) {
    throw ValidationError("combine datasets before normalising them");
  }
}
}  // namespace

Dataset concat(const Dataset& a, const Dataset& b) {
  check_compatible(a, b);
  Dataset out;
  out.meta = a.meta;
  out.meta.recipe = a.meta.recipe + "+" + b.meta.recipe;
  out.append_range(a, 0, a.size());
  out.append_range(b, 0, b.size());
  return out;
}

Dataset mix(const Dataset& a, const Dataset& b, double ratio) {
  check_compatible(a, b);
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("mix: ratio must lie in [0, 1]");
  const auto ta = a.trajectories();
  const auto tb = b.trajectories();
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  // Sample budgets: keep all of the scarcer side, trim the other to the ratio.
  double want_a = na;
  double want_b = nb;
  if (ratio >= 1.0) {
    want_b = 0.0;
  } else if (ratio <= 0.0) {
    want_a = 0.0;
  } else if (na + nb > 0 && na / (na + nb) > ratio) {
    want_a = ratio / (1.0 - ratio) * nb;
  } else {
    want_b = (1.0 - ratio) / ratio * na;
  }

  auto take = [](const std::vector<std::pair<std::size_t, std::size_t>>& trajs, double budget) {
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    double used = 0.0;
    for (const auto& t : trajs) {
      const double len = static_cast<double>(t.second - t.first);
      // Keep a trajectory if that lands closer to the budget than stopping.
      if (std::abs(used + len - budget) > std::abs(used - budget)) break;
      kept.push_back(t);
      used += len;
    }
    return kept;
  };
  const auto keep_a = take(ta, want_a);
  const auto keep_b = take(tb, want_b);

  Dataset out;
  out.meta = a.meta;
  out.meta.recipe = a.meta.recipe + "/" + b.meta.recipe + "@" + std::to_string(ratio);
  out.meta.random_score.reset();
  out.meta.expert_score.reset();
  std::size_t ia = 0;
  std::size_t ib = 0;
  double taken_a = 0.0;
  double taken_b = 0.0;
  while (ia < keep_a.size() || ib < keep_b.size()) {
    const double total = taken_a + taken_b;
    const bool pick_a = ib >= keep_b.size() ||
                        (ia < keep_a.size() && (total == 0.0 ? ratio >= 0.5 : taken_a / total <= ratio));
    if (pick_a) {
      out.append_range(a, keep_a[ia].first, keep_a[ia].second);
      taken_a += static_cast<double>(keep_a[ia].second - keep_a[ia].first);
      ++ia;
    } else {
      out.append_range(b, keep_b[ib].first, keep_b[ib].second);
      taken_b += static_cast<double>(keep_b[ib].second - keep_b[ib].first);
      ++ib;
    }
  }
  return out;
}

NormalizedDataset normalize_states(const Dataset& d, double eps) {
  if (d.size() < 2) throw ValidationError("normalize_states needs at least 2 samples");
  if (d.meta.normalized) throw ValidationError("dataset is already normalised");
  const auto sd = d.meta.state_dim;
  const auto n = d.size();
  std::vector<double> mean(sd, 0.0);
  std::vector<double> var(sd, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < sd; ++j) mean[j] += d.states[i * sd + j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < sd; ++j) {
      const double c = d.states[i * sd + j] - mean[j];
      var[j] += c * c;
    }
  }
  std::vector<double> sdev(sd);
  std::vector<double> denom(sd);
  for (std::size_t j = 0; j < sd; ++j) {
    sdev[j] = std::sqrt(var[j] / static_cast<double>(n));
    denom[j] = sdev[j] + eps;
  }
  NormalizedDataset out{d, mean, sdev};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < sd; ++j) {
      out.data.states[i * sd + j] = static_cast<float>((d.states[i * sd + j] - mean[j]) / denom[j]);
      out.data.next_states[i * sd + j] =
          static_cast<float>((d.next_states[i * sd + j] - mean[j]) / denom[j]);
    }
  }
  out.data.meta.normalized = true;
  out.data.meta.state_mean = mean;
  out.data.meta.state_std = denom;
  return out;
}

DatasetStats stats(const Dataset& d) {
  DatasetStats s;
  s.samples = d.size();
  for (const auto& [begin, end] : d.trajectories()) {
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) total += d.rewards[i];
    s.returns.push_back(total);
  }
  s.trajectories = s.returns.size();
  if (!s.returns.empty()) {
    double sum = 0.0;
    for (double r : s.returns) sum += r;
    s.mean_return = sum / static_cast<double>(s.returns.size());
    s.min_return = *std::min_element(s.returns.begin(), s.returns.end());
    s.max_return = *std::max_element(s.returns.begin(), s.returns.end());
  }
  return s;
}

std::string stats_json(const DatasetStats& s, const DatasetMeta& meta) {
  json j = {{"env_id", meta.env_id},       {"recipe", meta.recipe},
            {"trajectories", s.trajectories}, {"samples", s.samples},
            {"mean_return", s.mean_return}, {"min_return", s.min_return},
            {"max_return", s.max_return}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------

std::string meta_to_json(const DatasetMeta& meta) {
  json j = {{"env_id", meta.env_id},         {"state_dim", meta.state_dim},
            {"action_dim", meta.action_dim}, {"recipe", meta.recipe},
            {"normalized", meta.normalized}, {"state_mean", meta.state_mean},
            {"state_std", meta.state_std}};
  j["random_score"] = meta.random_score ? json(*meta.random_score) : json(nullptr);
  j["expert_score"] = meta.expert_score ? json(*meta.expert_score) : json(nullptr);
  return j.dump();
}

DatasetMeta meta_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    DatasetMeta meta;
    meta.env_id = j.at("env_id").get<std::string>();
    meta.state_dim = j.at("state_dim").get<std::size_t>();
    meta.action_dim = j.at("action_dim").get<std::size_t>();
    meta.recipe = j.at("recipe").get<std::string>();
    meta.normalized = j.at("normalized").get<bool>();
    meta.state_mean = j.at("state_mean").get<std::vector<double>>();
    meta.state_std = j.at("state_std").get<std::vector<double>>();
    if (j.contains("random_score") && !j["random_score"].is_null()) {
      meta.random_score = j["random_score"].get<double>();
    }
    if (j.contains("expert_score") && !j["expert_score"].is_null()) {
      meta.expert_score = j["expert_score"].get<double>();
    }
    return meta;
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Format, std::string("dataset metadata: ") + e.what());
  }
}

namespace {
constexpr char kMagic[4] = {'M', 'C', 'D', 'S'};

std::uint32_t crc_of(const std::string& buf, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n)));
}
}  // namespace

void save(const Dataset& d, std::ostream& out) {
  d.validate();
  std::string buf(kMagic, 4);
  detail::put_u32(buf, kDatasetVersion);
  const std::string meta = meta_to_json(d.meta);
  detail::put_u32(buf, static_cast<std::uint32_t>(meta.size()));
  buf += meta;
  detail::put_le<std::uint64_t>(buf, d.size());
  for (const auto* col : {&d.states, &d.actions, &d.rewards, &d.next_states, &d.dones, &d.timeouts}) {
    for (float v : *col) detail::put_f32(buf, v);
  }
  detail::put_u32(buf, crc_of(buf, buf.size()));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(DataError::Kind::Io, "failed to write dataset");
}

Dataset load(std::istream& in) {
  const std::string data = detail::read_all(in);
  if (data.size() < 4 || data.compare(0, 4, kMagic, 4) != 0) {
    if (data.size() < 4) throw DataError(DataError::Kind::Truncated, "dataset file is truncated");
    throw DataError(DataError::Kind::BadMagic, "not an MCDS dataset (bad magic)");
  }
  if (data.size() < 12) throw DataError(DataError::Kind::Truncated, "dataset file is truncated");
  detail::ByteReader r(data, data.size() - 4, "dataset");
  r.bytes(4);
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw DataError(DataError::Kind::VersionMismatch,
                    "dataset version " + std::to_string(version) + " is not supported");
  }
  const auto meta_len = r.u32();
  const std::string meta_text = r.bytes(meta_len);
  const auto n = r.get_le<std::uint64_t>();

  // Size is checked before the checksum so truncation is reported as such.
  DatasetMeta meta = meta_from_json(meta_text);
  const std::size_t per_sample = 2 * meta.state_dim + meta.action_dim + 3;
  if (n > (std::numeric_limits<std::size_t>::max() / 4) / std::max<std::size_t>(per_sample, 1)) {
    throw DataError(DataError::Kind::Format, "dataset sample count is implausible");
  }
  const std::size_t payload = static_cast<std::size_t>(n) * per_sample * 4;
  if (r.remaining() < payload) throw DataError(DataError::Kind::Truncated, "dataset is truncated");
  if (r.remaining() > payload) throw DataError(DataError::Kind::Format, "dataset has trailing bytes");

  detail::ByteReader trailer(data, data.size(), "dataset");
  trailer.bytes(data.size() - 4);
  const auto stored_crc = trailer.u32();
  if (stored_crc != crc_of(data, data.size() - 4)) {
    throw DataError(DataError::Kind::Checksum, "dataset checksum mismatch");
  }

  Dataset d;
  d.meta = std::move(meta);
  auto read_col = [&](std::vector<float>& col, std::size_t len) {
    col.resize(len);
    for (auto& v : col) v = r.f32();
  };
  read_col(d.states, n * d.meta.state_dim);
  read_col(d.actions, n * d.meta.action_dim);
  read_col(d.rewards, n);
  read_col(d.next_states, n * d.meta.state_dim);
  read_col(d.dones, n);
  read_col(d.timeouts, n);
  return d;
}

void save(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, "cannot open '" + path + "' for writing");
  save(d, out);
}

Dataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open dataset '" + path + "'");
  return load(in);
}

// ---------------------------------------------------------------------------

Batch gather(const Dataset& d, std::span<const std::size_t> indices) {
  const auto n = static_cast<Eigen::Index>(indices.size());
  const auto sd = static_cast<Eigen::Index>(d.meta.state_dim);
  const auto ad = static_cast<Eigen::Index>(d.meta.action_dim);
  Batch b{nn::Matrix(n, sd), nn::Matrix(n, ad), nn::Matrix(n, 1), nn::Matrix(n, sd),
          nn::Matrix(n, 1)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = indices[static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < sd; ++j) {
      b.states(k, j) = d.states[i * sd + j];
      b.next_states(k, j) = d.next_states[i * sd + j];
    }
    for (Eigen::Index j = 0; j < ad; ++j) b.actions(k, j) = d.actions[i * ad + j];
    b.rewards(k, 0) = d.rewards[i];
    b.dones(k, 0) = d.dones[i];
  }
  return b;
}

Batch sample_batch(const Dataset& d, std::size_t n, Rng& rng) {
  if (d.empty()) throw ValidationError("cannot sample from an empty dataset");
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.index(d.size());
  return gather(d, idx);
}

Batch full_batch(const Dataset& d) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather(d, idx);
}

}  // namespace mcep::data
