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
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcep/algos.hpp"
#include "mcep/common.hpp"
#include "mcep/eval.hpp"

namespace mcep::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Bad configuration. `keys()` names every offending key.
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& what, std::vector<std::string> keys);
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
};

enum class ValueType {
  Real,
  RealOrAuto,  ///< a number or "auto"
  OptionalReal,  ///< a number or blank
  Integer,
  Boolean,
  Text,
  RealList,
  IntegerList,
};

struct KeySpec {
  const char* key;
  ValueType type;
  const char* default_value;
  const char* help;
  const char* choices;  ///< comma-separated allowed values, or empty
};

/// Every accepted key with its default, in documentation order.
const std::vector<KeySpec>& schema();

/// Flat dotted key -> value map. Values are stored in canonical text form, so
/// two configs that parse to the same values compare equal.
class RunConfig {
 public:
  static RunConfig defaults();

  /// "key = value" lines; '#' starts a comment. Throws ConfigError naming
  /// every unknown key and every unparsable value.
  void apply_text(const std::string& text);
  /// "key=value" strings, same error reporting as apply_text.
  void apply_overrides(const std::vector<std::string>& assignments);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  /// Empty optional when the value is blank.
  std::optional<double> optional_real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::uint64_t> integers(const std::string& key) const;

  /// Replaces "auto" placeholders with the algorithm's default.
  void resolve();

  /// Sorted "key = value" lines; apply_text on defaults() reproduces this config.
  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

/// Defaults, then the file (when `path` is non-empty), then overrides, then resolve().
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

algos::TrainConfig train_config(const RunConfig& c);
eval::SelectionConfig selection_config(const RunConfig& c);

/// {"tool", "version", "command", "seed", "config": {key: value}}.
std::string manifest_json(const RunConfig& c, const std::string& command);
RunConfig config_from_manifest(const std::string& json_text);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDiverged = 4;

const std::vector<std::string>& commands();

/// Runs one subcommand. Progress goes to `out`; failures are reported as a
/// single JSON object on `err` and mapped to the exit codes above.
int run(const std::string& command, const std::string& config_path,
        const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err);

}  // namespace mcep::cli
