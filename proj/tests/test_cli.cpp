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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mcep/cli.hpp"

namespace mcep::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("mcep_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return (path_ / child).string(); }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(const std::string& command, const std::vector<std::string>& overrides,
               const std::string& config_path = "") {
  std::ostringstream out, err;
  const int code = run(command, config_path, overrides, out, err);
  return {code, out.str(), err.str()};
}

TEST(Config, DefaultsMatchTheHyperParameterTable) {
  RunConfig c = RunConfig::defaults();
  c.resolve();
  const auto t = train_config(c);
  EXPECT_EQ(t.algorithm, algos::Algorithm::Td3bc);
  EXPECT_EQ(t.alpha_tilde, 2.5);
  EXPECT_EQ(t.alpha_e, 10.0);
  EXPECT_EQ(t.lambda_tilde, 1.0);
  EXPECT_EQ(t.lambda_e, 0.6);
  EXPECT_EQ(t.gamma, 0.99);
  EXPECT_EQ(t.eta, 0.005);
  EXPECT_EQ(t.lr_critic, 3e-4);
  EXPECT_EQ(t.lr_actor, 3e-4);
  EXPECT_EQ(t.lr_actor_e, 3e-4);
  EXPECT_EQ(t.batch_size, 256u);
  EXPECT_EQ(t.policy_delay, 2u);
  EXPECT_EQ(t.hidden, (std::vector<std::size_t>{256, 256}));
  EXPECT_TRUE(t.mcep_enabled);
}

TEST(Config, AutoLearningRateFollowsTheAlgorithm) {
  RunConfig c = RunConfig::defaults();
  c.apply_overrides({"train.algorithm=awac"});
  c.resolve();
  EXPECT_EQ(train_config(c).lr_actor, 3e-5);
  EXPECT_EQ(train_config(c).lr_actor_e, 3e-5);
  RunConfig explicit_lr = RunConfig::defaults();
  explicit_lr.apply_overrides({"train.algorithm=awac", "train.lr_actor=1e-3"});
  explicit_lr.resolve();
  EXPECT_EQ(train_config(explicit_lr).lr_actor, 1e-3);
  EXPECT_EQ(train_config(explicit_lr).lr_actor_e, 3e-5);
}

TEST(Config, TextFormRoundTrips) {
  RunConfig c = RunConfig::defaults();
  c.apply_text(
      "# a comment\n"
      "seed = 7\n"
      "train.hidden = 32, 16   # trailing comment\n"
      "sweep.grid = 1,2.5,10\n"
      "eval.discount = 0.9\n");
  EXPECT_EQ(c.integer("seed"), 7);
  EXPECT_EQ(c.integers("train.hidden"), (std::vector<std::uint64_t>{32, 16}));
  EXPECT_EQ(c.reals("sweep.grid"), (std::vector<double>{1.0, 2.5, 10.0}));
  EXPECT_EQ(c.optional_real("eval.discount"), 0.9);
  EXPECT_FALSE(RunConfig::defaults().optional_real("eval.discount").has_value());
  RunConfig back = RunConfig::defaults();
  back.apply_text(c.to_text());
  EXPECT_EQ(back, c);
}

TEST(Config, EquivalentSpellingsCompareEqual) {
  RunConfig a = RunConfig::defaults();
  RunConfig b = RunConfig::defaults();
  a.apply_overrides({"train.eta=0.005", "train.mcep=true", "train.lr_actor=0.0003"});
  b.apply_overrides({"train.eta=5e-3", "train.mcep=1", "train.lr_actor=3e-4"});
  EXPECT_EQ(a, b);
}

TEST(Config, ManifestRoundTrips) {
  RunConfig c = RunConfig::defaults();
  c.apply_overrides({"seed=3", "env.id=maze", "train.algorithm=tabular_kl"});
  c.resolve();
  const json j = json::parse(manifest_json(c, "train"));
  EXPECT_EQ(j.at("tool"), "mcep");
  EXPECT_EQ(j.at("version"), kVersion);
  EXPECT_EQ(j.at("command"), "train");
  EXPECT_EQ(j.at("seed"), 3);
  EXPECT_EQ(config_from_manifest(j.dump()), c);
}

TEST(Config, EveryProblemIsReported) {
  RunConfig c = RunConfig::defaults();
  try {
    c.apply_overrides({"train.bogus=1", "train.eta=fast", "env.id=mars", "seed=-x", "nonsense"});
    FAIL();
  } catch (const ConfigError& e) {
    const auto& k = e.keys();
    for (const char* want : {"train.bogus", "train.eta", "env.id", "seed"}) {
      EXPECT_NE(std::find(k.begin(), k.end(), want), k.end()) << want;
    }
    EXPECT_GE(k.size(), 5u);
  }
}

TEST(Config, SchemaIsCompleteAndParsesItsOwnDefaults) {
  std::set<std::string> keys;
  for (const auto& spec : schema()) {
    EXPECT_TRUE(keys.insert(spec.key).second) << spec.key;
    EXPECT_NE(std::string(spec.help), "");
  }
  EXPECT_EQ(RunConfig::defaults().values().size(), keys.size());
  EXPECT_EQ(commands().size(), 6u);
}

TEST(Run, UnknownKeysExitWithConfigStatus) {
  TempDir tmp;
  const auto r = invoke("train", {"output.dir=" + tmp.str("o"), "train.nope=1", "env.slip=abc"});
  EXPECT_EQ(r.code, kExitConfig);
  const json err = json::parse(r.err);
  EXPECT_EQ(err.at("error"), "config");
  const auto keys = err.at("keys").get<std::vector<std::string>>();
  EXPECT_EQ(keys.size(), 2u);
  EXPECT_EQ(invoke("launch", {}).code, kExitConfig);
}

TEST(Run, MissingDatasetExitsWithDataStatus) {
  TempDir tmp;
  const auto r = invoke("train", {"output.dir=" + tmp.str("o"), "data.path=" + tmp.str("none.mcds")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_EQ(json::parse(r.err).at("error"), "data");
}

TEST(Run, MissingConfigFileExitsWithDataStatus) {
  TempDir tmp;
  EXPECT_EQ(invoke("train", {"output.dir=" + tmp.str("o")}, tmp.str("absent.cfg")).code, kExitData);
}

TEST(Run, ConfigFileAndOverridesCombine) {
  TempDir tmp;
  {
    std::ofstream f(tmp.path() / "run.cfg");
    f << "env.id = maze\nseed = 4\ndemo.steps = 50\n";
  }
  const auto r = invoke("maze-demo", {"output.dir=" + tmp.str("o"), "seed=5"}, tmp.str("run.cfg"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json m = json::parse(slurp(tmp.path() / "o" / "manifest.json"));
  EXPECT_EQ(m.at("seed"), 5);
  EXPECT_EQ(m.at("config").at("demo.steps"), "50");
}

TEST(Run, DivergenceExitsWithItsOwnStatus) {
  TempDir tmp;
  const std::string data = tmp.str("maze.mcds");
  ASSERT_EQ(invoke("collect", {"output.dir=" + tmp.str("c"), "env.id=maze",
                               "collect.recipe=maze-random-expert", "collect.output=" + data})
                .code,
            kExitOk);
  const std::vector<std::string> base{"env.id=maze", "data.path=" + data,
                                      "train.algorithm=tabular_kl", "train.steps=200",
                                      "train.q_max=1e-9", "train.divergence_window=1"};
  auto lenient = base;
  lenient.push_back("output.dir=" + tmp.str("a"));
  EXPECT_EQ(invoke("train", lenient).code, kExitOk);
  EXPECT_TRUE(json::parse(slurp(tmp.path() / "a" / "train_summary.json")).at("diverged"));
  auto strict = base;
  strict.push_back("output.dir=" + tmp.str("b"));
  strict.push_back("train.fail_on_divergence=true");
  const auto r = invoke("train", strict);
  EXPECT_EQ(r.code, kExitDiverged);
  EXPECT_EQ(json::parse(r.err).at("error"), "diverged");
}

TEST(Run, MazeDemoWritesItsArtifacts) {
  TempDir tmp;
  const auto r = invoke("maze-demo", {"output.dir=" + tmp.str(), "env.id=maze", "demo.steps=500"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* f : {"manifest.json", "v_star.csv", "v_target.csv", "policy_target.csv",
                        "policy_greedy.csv", "q_hat.csv", "maze_demo.json"}) {
    EXPECT_TRUE(fs::exists(tmp.path() / f)) << f;
  }
  const json j = json::parse(slurp(tmp.path() / "maze_demo.json"));
  EXPECT_GT(j.at("optimal_return").get<double>(), j.at("behavior_return").get<double>());
  EXPECT_FALSE(j.at("diverged").get<bool>());
}

TEST(Run, UntrainedMazePolicyScoresNearRandom) {
  TempDir tmp;
  const auto r = invoke("eval", {"output.dir=" + tmp.str(), "env.id=maze", "eval.episodes=50"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(slurp(tmp.path() / "eval.json"));
  EXPECT_LE(std::abs(j.at("normalized_return").get<double>()), 5.0);
  EXPECT_EQ(j.at("discount").get<double>(), 0.95);
}

TEST(Run, TabularTrainThenEvalAndQdiff) {
  TempDir tmp;
  const std::string data = tmp.str("maze.mcds");
  ASSERT_EQ(invoke("collect", {"output.dir=" + tmp.str("c"), "env.id=maze",
                               "collect.recipe=maze-random-expert", "collect.output=" + data})
                .code,
            kExitOk);
  const auto t = invoke("train", {"output.dir=" + tmp.str("t"), "env.id=maze", "data.path=" + data,
                                  "train.algorithm=tabular_kl", "train.steps=300",
                                  "train.batch_size=0", "train.lr_critic=1", "train.eta=0.05",
                                  "train.lr_actor=0.5", "train.lr_actor_e=0.5"});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const auto e = invoke("eval", {"output.dir=" + tmp.str("e"), "env.id=maze",
                                 "eval.policy=" + tmp.str("t/policy_eval.csv")});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  const auto q = invoke("qdiff", {"output.dir=" + tmp.str("q"), "env.id=maze", "data.path=" + data,
                                  "eval.policy=" + tmp.str("t/policy_eval.csv"),
                                  "eval.q_table=" + tmp.str("t/q.csv")});
  ASSERT_EQ(q.code, kExitOk) << q.err;
  EXPECT_TRUE(json::parse(slurp(tmp.path() / "q" / "qdiff.json")).contains("mean"));
}

TEST(Run, SameSeedTrainingReproducesManifestAndCheckpoints) {
  TempDir tmp;
  const std::string data = tmp.str("pm.mcds");
  ASSERT_EQ(invoke("collect", {"output.dir=" + tmp.str("c"), "collect.trajectories=4",
                               "collect.output=" + data})
                .code,
            kExitOk);
  const std::vector<std::string> args{"output.dir=" + tmp.str("t"), "data.path=" + data,
                                      "train.steps=40", "train.hidden=8,8", "train.batch_size=16",
                                      "seed=9"};
  ASSERT_EQ(invoke("train", args).code, kExitOk);
  std::map<std::string, std::string> first;
  for (const char* f : {"manifest.json", "policy_target.ckpt", "policy_eval.ckpt", "q1.ckpt", "q2.ckpt"}) {
    first[f] = slurp(tmp.path() / "t" / f);
    EXPECT_FALSE(first[f].empty()) << f;
  }
  ASSERT_EQ(invoke("train", args).code, kExitOk);
  for (const auto& [f, bytes] : first) EXPECT_EQ(slurp(tmp.path() / "t" / f), bytes) << f;

  auto other = args;
  other.back() = "seed=10";
  ASSERT_EQ(invoke("train", other).code, kExitOk);
  EXPECT_NE(slurp(tmp.path() / "t" / "q1.ckpt"), first["q1.ckpt"]);
}

TEST(Run, RelativeOutputUsesTheRootVariable) {
  TempDir tmp;
  ::setenv("MCEP_OUTPUT_ROOT", tmp.str().c_str(), 1);
  const auto r = invoke("eval", {"output.dir=rel", "env.id=maze", "eval.episodes=2"});
  ::unsetenv("MCEP_OUTPUT_ROOT");
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(tmp.path() / "rel" / "eval.json"));
}

}  // namespace
}  // namespace mcep::cli
