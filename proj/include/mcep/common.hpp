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
#include <random>
#include <stdexcept>
#include <string>

namespace mcep {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed user input: maps, configs, shapes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (e.g. stepping a terminal state).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Non-finite values showed up in a gradient or a training metric.
class NumericError : public Error {
 public:
  NumericError(std::string what, std::string parameter)
      : Error(std::move(what)), parameter_(std::move(parameter)) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

/// File level problems. `kind()` separates the failure modes callers act on.
class DataError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Checksum, Format };

  DataError(Kind kind, std::string what) : Error(std::move(what)), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(DataError::Kind kind);

/// 64-bit seed. Identical seeds give identical streams.
struct Seed {
  std::uint64_t value = 0;
};

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream. Each consumer owns one; streams are split,
/// never shared, so that adding a consumer does not perturb the others.
class Rng {
 public:
  explicit Rng(Seed seed) : seed_(seed.value), engine_(mix_seed(seed.value)) {}
  explicit Rng(std::uint64_t seed) : Rng(Seed{seed}) {}

  /// Child stream keyed by `stream`; does not advance this stream.
  Rng split(std::uint64_t stream) const {
    return Rng(Seed{mix_seed(seed_ ^ mix_seed(stream + 0x51ed270b27a3c9f1ULL))});
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace mcep
