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

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "mcep/cli.hpp"

namespace {

std::string key_listing() {
  std::string out = "Configuration keys (key = default):\n";
  for (const auto& k : mcep::cli::schema()) {
    out += "  " + std::string(k.key) + " = " + k.default_value + "\n      " + k.help;
    if (*k.choices) out += " [" + std::string(k.choices) + "]";
    out += "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL laboratory: data collection, training, evaluation and sweeps."};
  app.set_version_flag("--version", std::string("mcep ") + mcep::cli::kVersion);
  app.require_subcommand(0, 1);
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "Print every configuration key with its default");

  struct Args {
    std::string config;
    std::vector<std::string> overrides;
  };
  Args args;
  const std::vector<std::pair<std::string, std::string>> help = {
      {"collect", "Collect a dataset with a behaviour policy or a named recipe"},
      {"train", "Train an actor-critic agent on a dataset"},
      {"eval", "Roll out a policy and report (normalised) returns"},
      {"sweep", "Train and evaluate over a grid of constraint strengths and seeds"},
      {"maze-demo", "Tabular maze demonstration with exact value tables"},
      {"qdiff", "Per-sample Q(s, pi(s)) - Q(s, a) over a dataset"}};
  for (const auto& [name, text] : help) {
    CLI::App* sub = app.add_subcommand(name, text);
    sub->add_option("-c,--config", args.config, "Flat key = value configuration file");
    sub->add_option("overrides", args.overrides, "key=value overrides applied after the file");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (list_keys) {
    std::cout << key_listing();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return mcep::cli::kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return mcep::cli::run(command, args.config, args.overrides, std::cout, std::cerr);
}
