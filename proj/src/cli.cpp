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

#include "mcep/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "mcep/datasets.hpp"
#include "mcep/dp.hpp"
#include "mcep/mdp.hpp"
#include "mcep/recipes.hpp"

namespace mcep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

ConfigError::ConfigError(const std::string& what, std::vector<std::string> keys)
    : ValidationError(what), keys_(std::move(keys)) {}

namespace {

using V = ValueType;

const std::vector<KeySpec> kSchema = {
    {"output.dir", V::Text, "out", "output directory; relative paths sit under $MCEP_OUTPUT_ROOT", ""},
    {"seed", V::Integer, "0", "run seed", ""},

    {"env.id", V::Text, "pointmass", "environment", "pointmass,maze"},
    {"env.map", V::Text, "", "maze map file; blank uses the built-in 6x6 map", ""},
    {"env.slip", V::Real, "0.25", "maze slip probability", ""},
    {"env.goal_reward", V::Real, "10", "maze goal reward", ""},
    {"env.gamma", V::Real, "0.95", "maze discount used by the exact solvers", ""},
    {"env.horizon", V::Integer, "0", "episode horizon; 0 keeps the environment default", ""},
    {"env.overbootstrap", V::Boolean, "false", "maze: train on the over-bootstrapping variant", ""},
    {"env.overbootstrap_delta", V::Real, "0.07", "feature inflation of the tied region actions", ""},
    {"env.overbootstrap_states", V::Integer, "2", "size of the tied region", ""},

    {"data.path", V::Text, "", "dataset file", ""},

    {"collect.recipe", V::Text, "custom", "dataset recipe", "custom,maze-random-expert,pointmass"},
    {"collect.behavior", V::Text, "uniform_random", "behaviour for the custom recipe",
     "uniform_random,expert_tabular,checkpoint_policy,epsilon_mix"},
    {"collect.checkpoint", V::Text, "", "policy checkpoint for checkpoint behaviours", ""},
    {"collect.epsilon", V::Real, "0", "epsilon_mix: probability of a uniform action", ""},
    {"collect.noise_std", V::Real, "0", "Gaussian noise on checkpoint actions", ""},
    {"collect.trajectories", V::Integer, "100", "trajectories per dataset", ""},
    {"collect.random_trajectories", V::Integer, "99", "maze recipe: uniform-random trajectories", ""},
    {"collect.expert_trajectories", V::Integer, "1", "maze recipe: expert trajectories", ""},
    {"collect.online_steps", V::Integer, "20000", "point-mass recipe: online TD3 steps", ""},
    {"collect.online_hidden", V::IntegerList, "64,64", "point-mass recipe: online TD3 widths", ""},
    {"collect.medium_fraction", V::Real, "0.5", "point-mass recipe: medium policy score fraction", ""},
    {"collect.medium_noise", V::Real, "0.5", "point-mass recipe: medium rollout noise", ""},
    {"collect.anchor_episodes", V::Integer, "50", "point-mass recipe: episodes per anchor", ""},
    {"collect.output", V::Text, "dataset.mcds", "custom and maze recipes: output file name", ""},

    {"train.algorithm", V::Text, "td3bc", "trainer", "td3bc,awac,tabular_kl"},
    {"train.mcep", V::Boolean, "true", "train the evaluation policy", ""},
    {"train.alpha_tilde", V::Real, "2.5", "TD3BC target-policy Q weight", ""},
    {"train.alpha_e", V::Real, "10", "TD3BC evaluation-policy Q weight", ""},
    {"train.lambda_tilde", V::Real, "1", "AWAC target-policy advantage temperature", ""},
    {"train.lambda_e", V::Real, "0.6", "AWAC evaluation-policy likelihood weight", ""},
    {"train.kl_weight", V::Real, "1", "tabular target-policy KL weight", ""},
    {"train.kl_weight_e", V::Real, "0.1", "tabular evaluation-policy KL weight", ""},
    {"train.tabular_strength", V::Text, "kl_weight", "how tabular strengths enter the actor loss",
     "kl_weight,q_weight,q_normalized"},
    {"train.eta", V::Real, "0.005", "target-network EMA rate", ""},
    {"train.lr_critic", V::Real, "3e-4", "critic learning rate", ""},
    {"train.lr_actor", V::RealOrAuto, "auto", "target-policy learning rate; auto = 3e-4 (TD3BC) or 3e-5 (AWAC)", ""},
    {"train.lr_actor_e", V::RealOrAuto, "auto", "evaluation-policy learning rate; same auto rule", ""},
    {"train.batch_size", V::Integer, "256", "minibatch size; 0 = full batch", ""},
    {"train.steps", V::Integer, "100000", "gradient steps", ""},
    {"train.policy_delay", V::Integer, "2", "critic steps per policy step", ""},
    {"train.smoothing_std", V::Real, "0.2", "target-policy smoothing noise", ""},
    {"train.smoothing_clip", V::Real, "0.5", "target-policy smoothing clip", ""},
    {"train.update_mode", V::Text, "simultaneous", "when the evaluation policy trains", "simultaneous,afterward"},
    {"train.hidden", V::IntegerList, "256,256", "hidden widths of every network", ""},
    {"train.activation", V::Text, "relu", "hidden activation", "relu,tanh,identity"},
    {"train.gamma", V::Real, "0.99", "training discount", ""},
    {"train.normalize_states", V::Boolean, "true", "standardise observations", ""},
    {"train.q_max", V::Real, "0", "divergence threshold on mean |Q|; 0 = automatic", ""},
    {"train.divergence_window", V::Integer, "100", "steps averaged by the divergence monitor", ""},
    {"train.parallel_policy_updates", V::Boolean, "false", "update both actors concurrently", ""},
    {"train.checkpoint_interval", V::Integer, "0", "steps between intermediate checkpoints; 0 = none", ""},
    {"train.fail_on_divergence", V::Boolean, "false", "exit with status 4 when the run diverges", ""},

    {"eval.policy", V::Text, "", "policy checkpoint, or a policy CSV on the maze; blank = untrained", ""},
    {"eval.q1", V::Text, "", "first critic checkpoint", ""},
    {"eval.q2", V::Text, "", "second critic checkpoint", ""},
    {"eval.q_table", V::Text, "", "maze Q table CSV for qdiff; blank = exact Q", ""},
    {"eval.episodes", V::Integer, "20", "evaluation episodes", ""},
    {"eval.discount", V::OptionalReal, "", "return discount; blank = env.gamma on the maze, 1 otherwise", ""},
    {"eval.random_score", V::OptionalReal, "", "random anchor; blank = dataset metadata", ""},
    {"eval.expert_score", V::OptionalReal, "", "expert anchor; blank = dataset metadata", ""},

    {"select.mode", V::Text, "none", "inference-time action selection", "none,argmax,softmax"},
    {"select.noise_std", V::Real, "0.05", "candidate noise", ""},
    {"select.n_samples", V::Integer, "50", "candidates per state", ""},
    {"select.temperature", V::Real, "1", "softmax temperature", ""},

    {"sweep.parameter", V::Text, "", "strength to vary; blank = the algorithm's target strength", ""},
    {"sweep.grid", V::RealList, "2.5,5,10,20,30,40,50,60,70,80,90,100", "strength grid", ""},
    {"sweep.seeds", V::IntegerList, "0,1,2,3,4", "training seeds", ""},
    {"sweep.episodes", V::Integer, "20", "evaluation episodes per cell", ""},
    {"sweep.threads", V::Integer, "1", "worker threads", ""},

    {"qdiff.bins", V::Integer, "20", "histogram bins", ""},

    {"demo.steps", V::Integer, "5000", "maze demo: training steps", ""},
    {"demo.kl_weight", V::Real, "1", "maze demo: KL weight of the constrained actor", ""},
    {"demo.lr_critic", V::Real, "1", "maze demo: normalised critic step", ""},
    {"demo.lr_actor", V::Real, "0.5", "maze demo: actor step", ""},
    {"demo.eta", V::Real, "0.05", "maze demo: target EMA rate", ""},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kSchema) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto r = std::from_chars(first, s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_integer(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

/// Canonical text of `raw` for `spec`, or nullopt when it does not parse.
std::optional<std::string> canonical(const KeySpec& spec, const std::string& raw) {
  const std::string v = trim(raw);
  double x = 0.0;
  std::int64_t n = 0;
  switch (spec.type) {
    case V::Real:
      if (!parse_real(v, x)) return std::nullopt;
      return format_real(x);
    case V::RealOrAuto:
      if (v == "auto") return v;
      if (!parse_real(v, x)) return std::nullopt;
      return format_real(x);
    case V::OptionalReal:
      if (v.empty()) return v;
      if (!parse_real(v, x)) return std::nullopt;
      return format_real(x);
    case V::Integer:
      if (!parse_integer(v, n) || n < 0) return std::nullopt;
      return std::to_string(n);
    case V::Boolean:
      if (v == "true" || v == "1" || v == "yes" || v == "on") return "true";
      if (v == "false" || v == "0" || v == "no" || v == "off") return "false";
      return std::nullopt;
    case V::Text:
      if (*spec.choices) {
        for (const auto& c : split_list(spec.choices)) {
          if (c == v) return v;
        }
        return std::nullopt;
      }
      return v;
    case V::RealList: {
      std::string out;
      for (const auto& item : split_list(v)) {
        if (!parse_real(item, x)) return std::nullopt;
        out += (out.empty() ? "" : ",") + format_real(x);
      }
      if (out.empty()) return std::nullopt;
      return out;
    }
    case V::IntegerList: {
      std::string out;
      for (const auto& item : split_list(v)) {
        if (!parse_integer(item, n) || n < 0) return std::nullopt;
        out += (out.empty() ? "" : ",") + std::to_string(n);
      }
      if (out.empty()) return std::nullopt;
      return out;
    }
  }
  return std::nullopt;
}

/// Accumulates every problem of a batch of assignments before throwing.
class Problems {
 public:
  void unknown(const std::string& key) {
    keys_.push_back(key);
    lines_.push_back("unknown key '" + key + "'");
  }
  void bad_value(const KeySpec& spec, const std::string& value) {
    keys_.push_back(spec.key);
    std::string msg = "bad value '" + value + "' for " + spec.key;
    if (*spec.choices) msg += " (expected one of " + std::string(spec.choices) + ")";
    lines_.push_back(msg);
  }
  void syntax(const std::string& where) {
    keys_.push_back(where);
    lines_.push_back("expected key = value at " + where);
  }
  void raise() const {
    if (keys_.empty()) return;
    std::string msg = "invalid configuration: ";
    for (std::size_t i = 0; i < lines_.size(); ++i) msg += (i ? "; " : "") + lines_[i];
    throw ConfigError(msg, keys_);
  }

 private:
  std::vector<std::string> keys_;
  std::vector<std::string> lines_;
};

void assign(std::map<std::string, std::string>& values, const std::string& key,
            const std::string& value, Problems& problems) {
  const KeySpec* spec = find_key(key);
  if (!spec) {
    problems.unknown(key);
    return;
  }
  auto c = canonical(*spec, value);
  if (!c) {
    problems.bad_value(*spec, trim(value));
    return;
  }
  values[key] = *c;
}

}  // namespace

const std::vector<KeySpec>& schema() { return kSchema; }

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& k : kSchema) c.values_[k.key] = *canonical(k, k.default_value);
  return c;
}

void RunConfig::apply_text(const std::string& text) {
  Problems problems;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      problems.syntax("line " + std::to_string(lineno));
      continue;
    }
    assign(values_, trim(t.substr(0, eq)), t.substr(eq + 1), problems);
  }
  problems.raise();
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
  Problems problems;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      problems.syntax("'" + a + "'");
      continue;
    }
    assign(values_, trim(a.substr(0, eq)), a.substr(eq + 1), problems);
  }
  problems.raise();
}

void RunConfig::set(const std::string& key, const std::string& value) {
  Problems problems;
  assign(values_, key, value, problems);
  problems.raise();
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'", {key});
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  double x = 0.0;
  if (!parse_real(get(key), x)) throw ConfigError(key + " is not a number", {key});
  return x;
}

std::optional<double> RunConfig::optional_real(const std::string& key) const {
  if (get(key).empty()) return std::nullopt;
  return real(key);
}

std::int64_t RunConfig::integer(const std::string& key) const {
  std::int64_t n = 0;
  if (!parse_integer(get(key), n)) throw ConfigError(key + " is not an integer", {key});
  return n;
}

std::size_t RunConfig::count(const std::string& key) const {
  return static_cast<std::size_t>(integer(key));
}

bool RunConfig::boolean(const std::string& key) const { return get(key) == "true"; }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) {
    double x = 0.0;
    if (!parse_real(item, x)) throw ConfigError(key + " is not a list of numbers", {key});
    out.push_back(x);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::integers(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(get(key))) {
    std::int64_t n = 0;
    if (!parse_integer(item, n)) throw ConfigError(key + " is not a list of integers", {key});
    out.push_back(static_cast<std::uint64_t>(n));
  }
  return out;
}

void RunConfig::resolve() {
  const std::string lr = format_real(get("train.algorithm") == "awac" ? 3e-5 : 3e-4);
  for (const char* key : {"train.lr_actor", "train.lr_actor_e"}) {
    if (values_[key] == "auto") values_[key] = lr;
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = RunConfig::defaults();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError(DataError::Kind::Io, "cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    c.apply_text(ss.str());
  }
  c.apply_overrides(overrides);
  c.resolve();
  return c;
}

algos::TrainConfig train_config(const RunConfig& c) {
  algos::TrainConfig t;
  t.algorithm = algos::algorithm_from_string(c.get("train.algorithm"));
  t.mcep_enabled = c.boolean("train.mcep");
  t.alpha_tilde = c.real("train.alpha_tilde");
  t.alpha_e = c.real("train.alpha_e");
  t.lambda_tilde = c.real("train.lambda_tilde");
  t.lambda_e = c.real("train.lambda_e");
  t.kl_weight = c.real("train.kl_weight");
  t.kl_weight_e = c.real("train.kl_weight_e");
  t.tabular_strength = algos::tabular_strength_from_string(c.get("train.tabular_strength"));
  t.eta = c.real("train.eta");
  t.lr_critic = c.real("train.lr_critic");
  t.lr_actor = c.real("train.lr_actor");
  t.lr_actor_e = c.real("train.lr_actor_e");
  t.batch_size = c.count("train.batch_size");
  t.steps = c.count("train.steps");
  t.policy_delay = c.count("train.policy_delay");
  t.smoothing_std = c.real("train.smoothing_std");
  t.smoothing_clip = c.real("train.smoothing_clip");
  t.update_mode = algos::update_mode_from_string(c.get("train.update_mode"));
  t.seed = static_cast<std::uint64_t>(c.integer("seed"));
  t.hidden.clear();
  for (auto h : c.integers("train.hidden")) t.hidden.push_back(static_cast<std::size_t>(h));
  t.activation = nn::activation_from_string(c.get("train.activation"));
  t.gamma = c.real("train.gamma");
  t.normalize_states = c.boolean("train.normalize_states");
  t.q_max = c.real("train.q_max");
  t.divergence_window = c.count("train.divergence_window");
  t.parallel_policy_updates = c.boolean("train.parallel_policy_updates");
  t.checkpoint_interval = c.count("train.checkpoint_interval");
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what(), {"train"});
  }
  return t;
}

eval::SelectionConfig selection_config(const RunConfig& c) {
  eval::SelectionConfig s;
  s.mode = eval::selection_mode_from_string(c.get("select.mode"));
  s.noise_std = c.real("select.noise_std");
  s.n_samples = c.count("select.n_samples");
  s.temperature = c.real("select.temperature");
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what(), {"select"});
  }
  return s;
}

std::string manifest_json(const RunConfig& c, const std::string& command) {
  json cfg = json::object();
  for (const auto& [k, v] : c.values()) cfg[k] = v;
  json j = {{"tool", "mcep"},
            {"version", kVersion},
            {"command", command},
            {"seed", c.integer("seed")},
            {"config", cfg}};
  return j.dump(2) + "\n";
}

RunConfig config_from_manifest(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Format, std::string("manifest is not JSON: ") + e.what());
  }
  if (!j.contains("config") || !j["config"].is_object()) {
    throw DataError(DataError::Kind::Format, "manifest has no config object");
  }
  RunConfig c = RunConfig::defaults();
  std::vector<std::string> assignments;
  for (const auto& [k, v] : j["config"].items()) {
    if (!v.is_string()) throw DataError(DataError::Kind::Format, "manifest value of " + k + " is not a string");
    assignments.push_back(k + "=" + v.get<std::string>());
  }
  c.apply_overrides(assignments);
  return c;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

class Diverged : public Error {
 public:
  using Error::Error;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::Io, "cannot write " + p.string());
  f << text;
  if (!f) throw DataError(DataError::Kind::Io, "write failed: " + p.string());
}

template <class Fn>
void write_with(const fs::path& p, Fn&& fn) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::Io, "cannot write " + p.string());
  fn(f);
  if (!f) throw DataError(DataError::Kind::Io, "write failed: " + p.string());
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::Io, "cannot open " + path);
  return f;
}

fs::path output_dir(const RunConfig& c) {
  fs::path p = c.get("output.dir");
  if (p.is_relative()) {
    if (const char* root = std::getenv("MCEP_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError(DataError::Kind::Io, "cannot create " + p.string() + ": " + ec.message());
  return p;
}

const std::string& require(const RunConfig& c, const std::string& key) {
  const std::string& v = c.get(key);
  if (v.empty()) throw ConfigError(key + " must be set for this command", {key});
  return v;
}

std::shared_ptr<const mdp::Maze> make_maze(const RunConfig& c) {
  mdp::GridMapSpec spec =
      c.get("env.map").empty() ? mdp::default_maze_spec() : mdp::load_grid_map(c.get("env.map"));
  spec.slip_prob = c.real("env.slip");
  spec.goal_reward = c.real("env.goal_reward");
  return std::make_shared<const mdp::Maze>(mdp::build_maze(spec, c.real("env.gamma")));
}

bool is_maze(const RunConfig& c) { return c.get("env.id") == "maze"; }

struct Env {
  std::shared_ptr<const mdp::Maze> maze;  ///< null for the point mass
  std::unique_ptr<mdp::Environment> env;
};

Env make_env(const RunConfig& c) {
  Env e;
  const int h = static_cast<int>(c.integer("env.horizon"));
  if (is_maze(c)) {
    e.maze = make_maze(c);
    e.env = std::make_unique<mdp::MazeEnv>(e.maze, h > 0 ? h : 100);
  } else {
    mdp::PointMassParams p;
    if (h > 0) p.horizon = h;
    e.env = std::make_unique<mdp::PointMassEnv>(p);
  }
  return e;
}

/// Uniform-policy and optimal exact returns of the maze.
std::pair<double, double> maze_anchors(const mdp::Maze& maze) {
  const auto n = maze.mdp.n_states();
  const auto a = maze.mdp.n_actions();
  const double random = dp::policy_return(maze.mdp, dp::TabularPolicy::uniform(n, a));
  const double optimal =
      dp::policy_return(maze.mdp, dp::greedy_policy(dp::value_iteration(maze.mdp).q));
  return {random, optimal};
}

data::Dataset load_dataset(const RunConfig& c) { return data::load(require(c, "data.path")); }

void check_maze_dataset(const data::Dataset& d) {
  if (d.meta.env_id != "maze") {
    throw DataError(DataError::Kind::Format,
                    "expected a maze dataset, got env '" + d.meta.env_id + "'");
  }
}

/// Dataset and critic features for tabular training on the maze.
std::pair<data::Dataset, std::optional<algos::LinearFeatures>> tabular_inputs(
    const RunConfig& c, const mdp::Maze& maze, data::Dataset d) {
  if (!c.boolean("env.overbootstrap")) return {std::move(d), std::nullopt};
  const auto region = algos::default_overbootstrap_region(maze, c.count("env.overbootstrap_states"));
  auto inst = algos::over_bootstrap_instance(maze, d, region, c.real("env.overbootstrap_delta"));
  return {std::move(inst.dataset), std::move(inst.features)};
}

json metrics_json(const algos::MetricRow& r) {
  return {{"step", r.step},
          {"critic_loss", r.critic_loss},
          {"actor_loss_target", r.actor_loss_target},
          {"actor_loss_eval", r.actor_loss_eval},
          {"mean_abs_q", r.mean_abs_q}};
}

json report_json(const eval::EvalReport& r) {
  json j = {{"episodes", r.episodes}, {"mean_return", r.mean_return}, {"std_error", r.std_error}};
  j["normalized_return"] = r.normalized_return ? json(*r.normalized_return) : json(nullptr);
  return j;
}

// collect --------------------------------------------------------------------

int cmd_collect(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const std::string recipe = c.get("collect.recipe");
  const std::uint64_t seed = static_cast<std::uint64_t>(c.integer("seed"));

  if (recipe == "pointmass") {
    if (is_maze(c)) throw ConfigError("the pointmass recipe needs env.id = pointmass", {"env.id"});
    data::PointMassRecipeConfig rc;
    rc.online.steps = c.count("collect.online_steps");
    rc.online.start_steps = std::min<std::size_t>(rc.online.start_steps, rc.online.steps / 2);
    rc.online.hidden.clear();
    for (auto h : c.integers("collect.online_hidden")) rc.online.hidden.push_back(h);
    rc.n_trajectories = c.count("collect.trajectories");
    rc.medium_fraction = c.real("collect.medium_fraction");
    rc.medium_noise = c.real("collect.medium_noise");
    rc.anchor_episodes = c.count("collect.anchor_episodes");
    rc.seed = seed;
    mdp::PointMassParams params;
    if (c.integer("env.horizon") > 0) params.horizon = static_cast<int>(c.integer("env.horizon"));
    out << "training the online TD3 agent for " << rc.online.steps << " steps\n";
    const auto r = data::build_pointmass_recipes(rc, params);
    const std::pair<const char*, const data::Dataset*> sets[] = {
        {"random", &r.random},
        {"medium", &r.medium},
        {"medium-replay", &r.medium_replay},
        {"medium-expert", &r.medium_expert},
        {"expert", &r.expert}};
    json summary = {{"random_score", r.random_score},
                    {"expert_score", r.expert_score},
                    {"medium_score", r.medium_score},
                    {"medium_step", r.medium_step},
                    {"expert_step", r.expert_step}};
    for (const auto& [name, d] : sets) {
      const fs::path p = dir / (std::string(name) + ".mcds");
      data::save(*d, p.string());
      summary["datasets"][name] = json::parse(data::stats_json(data::stats(*d), d->meta));
      out << "wrote " << p.string() << " (" << d->size() << " transitions)\n";
    }
    nn::save_checkpoint((dir / "medium_policy.ckpt").string(), r.medium_policy);
    nn::save_checkpoint((dir / "expert_policy.ckpt").string(), r.expert_policy);
    write_text(dir / "collect_summary.json", summary.dump(2) + "\n");
    return kExitOk;
  }

  Env e = make_env(c);
  Rng rng(seed);
  data::Dataset d;
  if (recipe == "maze-random-expert") {
    if (!e.maze) throw ConfigError("the maze recipe needs env.id = maze", {"env.id"});
    data::MazeRecipeConfig mc;
    mc.n_random = c.count("collect.random_trajectories");
    mc.n_expert = c.count("collect.expert_trajectories");
    mc.horizon = e.env->horizon();
    d = data::maze_recipe(e.maze, rng, mc);
  } else {
    data::BehaviorSpec b;
    b.kind = data::behavior_kind_from_string(c.get("collect.behavior"));
    b.checkpoint_path = c.get("collect.checkpoint");
    b.epsilon = c.real("collect.epsilon");
    b.noise_std = c.real("collect.noise_std");
    try {
      b.validate();
    } catch (const ValidationError& ex) {
      throw ConfigError(ex.what(), {"collect.behavior"});
    }
    d = data::collect(*e.env, b, c.count("collect.trajectories"), e.env->horizon(), rng);
  }
  if (e.maze) {
    const auto [random, optimal] = maze_anchors(*e.maze);
    d.meta.random_score = random;
    d.meta.expert_score = optimal;
  }
  const fs::path p = dir / require(c, "collect.output");
  data::save(d, p.string());
  write_text(dir / "dataset_stats.json", data::stats_json(data::stats(d), d.meta) + "\n");
  out << "wrote " << p.string() << " (" << d.size() << " transitions)\n";
  return kExitOk;
}

// train ----------------------------------------------------------------------

int cmd_train(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const algos::TrainConfig cfg = train_config(c);
  data::Dataset d = load_dataset(c);
  json summary = {{"algorithm", algos::to_string(cfg.algorithm)}, {"seed", cfg.seed}};
  bool diverged = false;

  if (cfg.algorithm == algos::Algorithm::TabularKl) {
    check_maze_dataset(d);
    const auto maze = make_maze(c);
    auto [data_used, features] = tabular_inputs(c, *maze, std::move(d));
    const auto res = algos::train_tabular(cfg, data_used, maze->mdp.n_states(),
                                          maze->mdp.n_actions(), features);
    write_with(dir / "policy_target.csv", [&](std::ostream& f) { dp::write_policy_csv(f, res.target_policy); });
    if (res.eval_policy) {
      write_with(dir / "policy_eval.csv", [&](std::ostream& f) { dp::write_policy_csv(f, *res.eval_policy); });
    }
    write_with(dir / "q.csv", [&](std::ostream& f) { dp::write_q_csv(f, res.q); });
    write_with(dir / "metrics.csv", [&](std::ostream& f) { algos::write_metrics_csv(f, res.log); });
    diverged = res.diverged;
    summary["diverged"] = res.diverged;
    summary["divergence_reason"] = res.divergence_reason;
    if (!res.diverged) {
      summary["return_target"] = dp::policy_return(maze->mdp, res.target_policy);
      if (res.eval_policy) summary["return_eval"] = dp::policy_return(maze->mdp, *res.eval_policy);
      summary["return_greedy"] = dp::policy_return(maze->mdp, dp::greedy_policy(res.q));
    }
    if (!res.log.empty()) summary["final"] = metrics_json(res.log.back());
  } else {
    algos::CheckpointHook hook = [&](std::size_t step, const algos::TrainArtifacts& art) {
      const fs::path sub = dir / "checkpoints" / ("step_" + std::to_string(step));
      fs::create_directories(sub);
      nn::save_checkpoint((sub / "policy_target.ckpt").string(), art.policy_checkpoint(art.target_policy));
      if (art.eval_policy) {
        nn::save_checkpoint((sub / "policy_eval.ckpt").string(), art.policy_checkpoint(*art.eval_policy));
      }
      nn::save_checkpoint((sub / "q1.ckpt").string(), art.critic_checkpoint(art.critics.q1));
      nn::save_checkpoint((sub / "q2.ckpt").string(), art.critic_checkpoint(art.critics.q2));
    };
    out << "training " << algos::to_string(cfg.algorithm) << " for " << cfg.steps << " steps on "
        << d.size() << " transitions\n";
    const auto art = algos::train(cfg, d, hook);
    nn::save_checkpoint((dir / "policy_target.ckpt").string(), art.policy_checkpoint(art.target_policy));
    if (art.eval_policy) {
      nn::save_checkpoint((dir / "policy_eval.ckpt").string(), art.policy_checkpoint(*art.eval_policy));
    }
    nn::save_checkpoint((dir / "q1.ckpt").string(), art.critic_checkpoint(art.critics.q1));
    nn::save_checkpoint((dir / "q2.ckpt").string(), art.critic_checkpoint(art.critics.q2));
    write_with(dir / "metrics.csv", [&](std::ostream& f) { algos::write_metrics_csv(f, art.log); });
    diverged = art.diverged;
    summary["diverged"] = art.diverged;
    summary["divergence_reason"] = art.divergence_reason;
    if (!art.log.empty()) summary["final"] = metrics_json(art.log.back());
  }
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  out << (diverged ? "run diverged" : "training finished") << "; outputs in " << dir.string() << "\n";
  if (diverged && c.boolean("train.fail_on_divergence")) {
    throw Diverged("training diverged: " + summary["divergence_reason"].get<std::string>());
  }
  return kExitOk;
}

// eval -----------------------------------------------------------------------

double eval_discount(const RunConfig& c) {
  if (auto d = c.optional_real("eval.discount")) return *d;
  return is_maze(c) ? c.real("env.gamma") : 1.0;
}

dp::TabularPolicy read_policy(const std::string& path) {
  auto f = open_in(path);
  return dp::read_policy_csv(f);
}

/// Near-uniform softmax policy from small random logits.
dp::TabularPolicy untrained_tabular(const mdp::Maze& maze, std::uint64_t seed) {
  algos::TabularActor actor(maze.mdp.n_states(), maze.mdp.n_actions());
  Rng rng = Rng(seed).split(7);
  for (double& z : actor.logits) z = rng.uniform(-0.01, 0.01);
  return actor.policy();
}

std::optional<nn::Checkpoint> optional_checkpoint(const RunConfig& c, const std::string& key) {
  if (c.get(key).empty()) return std::nullopt;
  return nn::load_checkpoint(c.get(key));
}

eval::Agent load_agent(const RunConfig& c, const mdp::Environment& env) {
  const auto q1 = optional_checkpoint(c, "eval.q1");
  const auto q2 = optional_checkpoint(c, "eval.q2");
  if (!c.get("eval.policy").empty()) {
    return eval::Agent::from_checkpoints(nn::load_checkpoint(c.get("eval.policy")), q1, q2);
  }
  eval::Agent a;
  Rng rng = Rng(static_cast<std::uint64_t>(c.integer("seed"))).split(7);
  std::vector<std::size_t> hidden;
  for (auto h : c.integers("train.hidden")) hidden.push_back(h);
  a.policy = algos::Policy::make(algos::PolicyKind::Deterministic, env.obs_dim(), env.act_dim(),
                                 hidden, nn::activation_from_string(c.get("train.activation")),
                                 rng, "actor");
  if (q1) {
    auto from = eval::Agent::from_checkpoints(
        nn::Checkpoint{a.policy.net, nn::HeadKind::Deterministic, {}, {}}, q1, q2);
    a.critics = from.critics;
  }
  return a;
}

std::optional<std::pair<double, double>> eval_anchors(const RunConfig& c) {
  auto random = c.optional_real("eval.random_score");
  auto expert = c.optional_real("eval.expert_score");
  if ((!random || !expert) && !c.get("data.path").empty()) {
    const auto meta = data::load(c.get("data.path")).meta;
    if (!random) random = meta.random_score;
    if (!expert) expert = meta.expert_score;
  }
  if (random && expert) return std::make_pair(*random, *expert);
  return std::nullopt;
}

int cmd_eval(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  Env e = make_env(c);
  const std::size_t episodes = c.count("eval.episodes");
  if (episodes == 0) throw ConfigError("eval.episodes must be positive", {"eval.episodes"});
  const double discount = eval_discount(c);
  Rng rng = Rng(static_cast<std::uint64_t>(c.integer("seed"))).split(0xe7a1);
  json j;
  eval::EvalReport report;
  if (e.maze) {
    const dp::TabularPolicy pi =
        c.get("eval.policy").empty()
            ? untrained_tabular(*e.maze, static_cast<std::uint64_t>(c.integer("seed")))
            : read_policy(c.get("eval.policy"));
    if (pi.n_states != e.maze->mdp.n_states() || pi.n_actions != e.maze->mdp.n_actions()) {
      throw DataError(DataError::Kind::Format, "policy table does not match the maze");
    }
    report = eval::evaluate(*e.env, eval::tabular_actor(pi), episodes, rng, discount);
    const auto [random, optimal] = maze_anchors(*e.maze);
    const double exact = dp::policy_return(e.maze->mdp, pi);
    j = report_json(report);
    j["exact_return"] = exact;
    j["random_score"] = random;
    j["expert_score"] = optimal;
    // Normalised from the exact return; the rollout figure is kept alongside.
    j["normalized_return"] = eval::normalized_return(exact, random, optimal);
    j["normalized_rollout_return"] = eval::normalized_return(report.mean_return, random, optimal);
  } else {
    const eval::Agent agent = load_agent(c, *e.env);
    report = eval::evaluate(*e.env, agent, episodes, selection_config(c), rng, discount);
    if (const auto anchors = eval_anchors(c)) {
      report.normalized_return =
          eval::normalized_return(report.mean_return, anchors->first, anchors->second);
    }
    j = report_json(report);
    j["selection"] = c.get("select.mode");
  }
  j["discount"] = discount;
  write_text(dir / "eval.json", j.dump(2) + "\n");
  write_with(dir / "returns.csv", [&](std::ostream& f) {
    f.precision(17);
    f << "episode,return\n";
    for (std::size_t i = 0; i < report.returns.size(); ++i) f << i << ',' << report.returns[i] << '\n';
  });
  out << "mean return " << report.mean_return << " +- " << report.std_error;
  if (!j["normalized_return"].is_null()) out << ", normalized " << j["normalized_return"].get<double>();
  out << "\n";
  return kExitOk;
}

// sweep ----------------------------------------------------------------------

int cmd_sweep(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const algos::TrainConfig base = train_config(c);
  Env e = make_env(c);
  eval::SweepSpec spec;
  spec.parameter = c.get("sweep.parameter");
  spec.grid = c.reals("sweep.grid");
  spec.seeds = c.integers("sweep.seeds");
  spec.eval_episodes = c.count("sweep.episodes");
  spec.selection = selection_config(c);
  spec.threads = std::max<std::size_t>(1, c.count("sweep.threads"));

  data::Dataset d;
  if (base.algorithm == algos::Algorithm::TabularKl) {
    if (!e.maze) throw ConfigError("tabular sweeps need env.id = maze", {"env.id"});
    if (c.get("data.path").empty()) {
      Rng rng(static_cast<std::uint64_t>(c.integer("seed")));
      data::MazeRecipeConfig mc;
      mc.n_random = c.count("collect.random_trajectories");
      mc.n_expert = c.count("collect.expert_trajectories");
      mc.horizon = e.env->horizon();
      d = data::maze_recipe(e.maze, rng, mc);
    } else {
      d = load_dataset(c);
      check_maze_dataset(d);
    }
    auto [data_used, features] = tabular_inputs(c, *e.maze, std::move(d));
    d = std::move(data_used);
    spec.features = std::move(features);
  } else {
    d = load_dataset(c);
  }
  out << "sweeping " << spec.grid.size() << " strengths x " << spec.seeds.size() << " seeds\n";
  const auto report = eval::constraint_sweep(base, spec, d, *e.env);
  write_with(dir / "sweep.csv", [&](std::ostream& f) { report.write_csv(f); });
  write_text(dir / "sweep_summary.json", report.summary_json() + "\n");
  const auto edge = report.safe_edge();
  out << "safe edge " << (edge ? format_real(*edge) : std::string("none")) << ", monotone frontier "
      << (report.monotone_frontier() ? "yes" : "no") << "\n";
  return kExitOk;
}

// maze-demo ------------------------------------------------------------------

int cmd_maze_demo(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto maze = make_maze(c);
  const int h = static_cast<int>(c.integer("env.horizon"));
  const auto& m = maze->mdp;
  const std::uint64_t seed = static_cast<std::uint64_t>(c.integer("seed"));

  Rng rng(seed);
  data::MazeRecipeConfig mc;
  mc.n_random = c.count("collect.random_trajectories");
  mc.n_expert = c.count("collect.expert_trajectories");
  mc.horizon = h > 0 ? h : 100;
  const data::Dataset d = data::maze_recipe(maze, rng, mc);

  algos::TrainConfig cfg;
  cfg.algorithm = algos::Algorithm::TabularKl;
  cfg.tabular_strength = algos::TabularStrength::KlWeight;
  cfg.mcep_enabled = false;
  cfg.kl_weight = c.real("demo.kl_weight");
  cfg.gamma = m.discount();
  cfg.lr_critic = c.real("demo.lr_critic");
  cfg.lr_actor = c.real("demo.lr_actor");
  cfg.eta = c.real("demo.eta");
  cfg.steps = c.count("demo.steps");
  cfg.batch_size = 0;
  cfg.policy_delay = 1;
  cfg.seed = seed;
  try {
    cfg.validate();
  } catch (const ValidationError& ex) {
    throw ConfigError(ex.what(), {"demo"});
  }
  const auto res = algos::train_tabular(cfg, d, m.n_states(), m.n_actions());

  const auto optimal = dp::value_iteration(m);
  const auto v_target = dp::exact_policy_evaluation(m, res.target_policy);
  const auto greedy = dp::greedy_policy(res.q);
  write_with(dir / "v_star.csv", [&](std::ostream& f) { dp::write_values_csv(f, optimal.values); });
  write_with(dir / "v_target.csv", [&](std::ostream& f) { dp::write_values_csv(f, v_target.values); });
  write_with(dir / "policy_target.csv", [&](std::ostream& f) { dp::write_policy_csv(f, res.target_policy); });
  write_with(dir / "policy_greedy.csv", [&](std::ostream& f) { dp::write_policy_csv(f, greedy); });
  write_with(dir / "q_hat.csv", [&](std::ostream& f) { dp::write_q_csv(f, res.q); });

  const double r_opt = dp::policy_return(m, dp::greedy_policy(optimal.q));
  const double r_target = dp::policy_return(m, res.target_policy);
  const double r_greedy = dp::policy_return(m, greedy);
  const double r_behavior = dp::policy_return(m, res.behavior);
  json cells = json::array();
  for (const auto& cell : maze->cells) cells.push_back({cell.row, cell.col});
  json j = {{"optimal_return", r_opt},
            {"constrained_actor_return", r_target},
            {"greedy_recovered_return", r_greedy},
            {"behavior_return", r_behavior},
            {"greedy_ratio", r_greedy / r_opt},
            {"diverged", res.diverged},
            {"transitions", d.size()},
            {"state_cells", cells}};
  write_text(dir / "maze_demo.json", j.dump(2) + "\n");
  out << "optimal " << r_opt << ", constrained actor " << r_target << ", greedy(Q) " << r_greedy
      << "\n";
  return kExitOk;
}

// qdiff ----------------------------------------------------------------------

int cmd_qdiff(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const data::Dataset d = load_dataset(c);
  const std::size_t bins = std::max<std::size_t>(1, c.count("qdiff.bins"));
  eval::QDiffReport r;
  if (is_maze(c)) {
    check_maze_dataset(d);
    const auto maze = make_maze(c);
    dp::QTable q;
    if (c.get("eval.q_table").empty()) {
      q = dp::value_iteration(maze->mdp).q;
    } else {
      auto f = open_in(c.get("eval.q_table"));
      q = dp::read_q_csv(f);
    }
    const dp::TabularPolicy pi = c.get("eval.policy").empty() ? dp::greedy_policy(q)
                                                              : read_policy(c.get("eval.policy"));
    r = eval::q_diff_diagnostic(q, pi, d);
  } else {
    require(c, "eval.policy");
    require(c, "eval.q1");
    require(c, "eval.q2");
    Env e = make_env(c);
    r = eval::q_diff_diagnostic(load_agent(c, *e.env), d);
  }
  r = eval::summarize_qdiff(std::move(r.values), bins);
  write_with(dir / "qdiff.csv", [&](std::ostream& f) { eval::write_qdiff_csv(f, r); });
  write_text(dir / "qdiff.json", eval::qdiff_json(r) + "\n");
  out << "mean Q(s, pi(s)) - Q(s, a) = " << r.mean << " over " << r.values.size() << " samples\n";
  return kExitOk;
}

using Command = int (*)(const RunConfig&, const fs::path&, std::ostream&);

const std::vector<std::pair<std::string, Command>> kCommands = {
    {"collect", cmd_collect}, {"train", cmd_train},         {"eval", cmd_eval},
    {"sweep", cmd_sweep},     {"maze-demo", cmd_maze_demo}, {"qdiff", cmd_qdiff}};

void report_error(std::ostream& err, const std::string& kind, const std::string& message,
                  const json& extra = json::object()) {
  json j = {{"error", kind}, {"message", message}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  err << j.dump() << "\n";
}

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : kCommands) n.push_back(name);
    return n;
  }();
  return names;
}

int run(const std::string& command, const std::string& config_path,
        const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
  try {
    const auto it = std::find_if(kCommands.begin(), kCommands.end(),
                                 [&](const auto& p) { return p.first == command; });
    if (it == kCommands.end()) throw ConfigError("unknown command '" + command + "'", {"command"});
    const RunConfig cfg = load_config(config_path, overrides);
    const fs::path dir = output_dir(cfg);
    write_text(dir / "manifest.json", manifest_json(cfg, command));
    return it->second(cfg, dir, out);
  } catch (const ConfigError& e) {
    report_error(err, "config", e.what(), {{"keys", e.keys()}});
    return kExitConfig;
  } catch (const DataError& e) {
    report_error(err, "data", e.what(), {{"kind", to_string(e.kind())}});
    return kExitData;
  } catch (const Diverged& e) {
    report_error(err, "diverged", e.what());
    return kExitDiverged;
  } catch (const ValidationError& e) {
    report_error(err, "config", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    report_error(err, "numeric", e.what(), {{"parameter", e.parameter()}});
    return kExitFailure;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return kExitFailure;
  }
}

}  // namespace mcep::cli
