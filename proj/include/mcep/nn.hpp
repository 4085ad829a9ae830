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

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mcep/common.hpp"

namespace mcep::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Reverse-mode graph

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

/// Handle to a value in the computation graph. Cheap to copy; copies alias.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Matrix value);
  static Var scalar(double value);
  /// Trainable leaf.
  static Var leaf(Matrix value, std::string name = {});

  const Matrix& value() const { return node_->value; }
  /// Gradient, or zeros when nothing reached this node.
  Matrix grad() const;
  double item() const;

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Populates gradients of every node reachable from `loss`.
/// Throws ValidationError if the loss is not 1x1.
void backward(const Var& loss);

// Elementwise ops broadcast `b` when it is 1x1 or a single row matching a's width.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var softplus(const Var& a);
/// Gradient passes only where lo <= a <= hi.
Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
/// m x n -> m x 1.
Var row_sum(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

/// Same value, no gradient path.
Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Parameters and MLPs

/// A named trainable tensor with value semantics: copying a Parameter copies
/// its data into a fresh graph leaf.
class Parameter {
 public:
  Parameter() : node_(std::make_shared<Node>()) { node_->requires_grad = true; }
  Parameter(Matrix value, std::string name);
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return node_->name; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Graph leaf that accumulates into this parameter's gradient.
  Var var() const { return Var(node_); }
  /// Graph constant holding a copy of the current value.
  Var frozen() const { return Var::constant(node_->value); }

 private:
  std::shared_ptr<Node> node_;
};

enum class Activation : std::uint32_t { Relu = 0, Tanh = 1, Identity = 2 };
const char* to_string(Activation act);
Activation activation_from_string(const std::string& s);

/// Whether a forward pass records gradients for the network's own parameters.
enum class GradMode { Track, Frozen };

struct Layer {
  Parameter weight;  ///< in x out
  Parameter bias;    ///< 1 x out
};

class Mlp {
 public:
  Mlp() = default;
  /// Uniform fan-in initialisation U(-1/sqrt(in), 1/sqrt(in)); the final layer
  /// is additionally multiplied by `final_scale`.
  Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
      Activation activation, Rng& rng, double final_scale = 1.0, const std::string& name = "mlp");
  /// Takes explicit layers; throws ValidationError if dimensions do not chain.
  Mlp(std::vector<Layer> layers, Activation activation);

  /// Affine + activation stack, identity on the last layer.
  /// Throws ValidationError naming the layer whose input width mismatches.
  Var forward(const Var& x, GradMode mode = GradMode::Track) const;
  /// Forward pass without building a graph.
  Matrix predict(const Matrix& x) const;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::vector<std::size_t> hidden_sizes() const;
  Activation activation() const { return activation_; }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

  bool same_values(const Mlp& other) const;

 private:
  std::vector<Layer> layers_;
  Activation activation_ = Activation::Relu;
};

// ---------------------------------------------------------------------------
// Optimisation

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam moments for one parameter list.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update with the parameters' current gradients. Throws NumericError
  /// naming the first parameter whose gradient is non-finite; nothing is
  /// modified in that case.
  void step(std::span<Parameter* const> params, double lr);

  std::int64_t step_count() const { return step_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t step_ = 0;
};

/// target <- (1 - eta) * target + eta * online, elementwise.
void ema_update(Mlp& target, const Mlp& online, double eta);

// ---------------------------------------------------------------------------
// Policy heads

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kAtanhMargin = 1e-6;

/// tanh of the network output; actions lie in [-1, 1].
Var deterministic_action(const Mlp& net, const Var& x, GradMode mode = GradMode::Track);

struct TanhGaussianHead {
  Var mean;     ///< N x d
  Var log_std;  ///< N x d, clamped to [kLogStdMin, kLogStdMax]

  /// Splits a 2d-wide network output into mean and clamped log-std.
  static TanhGaussianHead from_output(const Var& out);
  static TanhGaussianHead from_network(const Mlp& net, const Var& x,
                                       GradMode mode = GradMode::Track);

  /// Sum over action dims of log density at `actions` (N x 1). Actions at or
  /// beyond +-1 are pulled in by kAtanhMargin; the count of such entries is
  /// added to `clamped` when given.
  Var log_prob(const Matrix& actions, std::size_t* clamped = nullptr) const;
  /// Reparameterised sample tanh(mean + std * noise) and its log density.
  std::pair<Var, Var> sample(const Matrix& noise) const;
  /// tanh(mean).
  Var mode() const { return tanh(mean); }
};

/// Draws standard normal noise from `rng` and returns (action, log_prob).
std::pair<Var, Var> gaussian_sample_logprob(const TanhGaussianHead& head, Rng& rng);

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// ---------------------------------------------------------------------------
// Verification

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = 0;
};

/// Compares backprop gradients with central differences for every coordinate
/// of `params`. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<Var()>& loss_fn,
                           std::span<Parameter* const> params, double eps = 1e-5,
                           double floor = 1e-6);

// ---------------------------------------------------------------------------
// Checkpoints: "MCEP", u32 version, u32 head kind, u32 activation,
// u32 layer count, (u32 in, u32 out) per layer, u32 normaliser width,
// then little-endian f64: per layer weights (row-major) and bias, then the
// normaliser mean and std.

enum class HeadKind : std::uint32_t { Critic = 0, Deterministic = 1, TanhGaussian = 2 };
const char* to_string(HeadKind kind);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Mlp net;
  HeadKind head = HeadKind::Critic;
  std::vector<double> input_mean;  ///< empty when inputs are not normalised
  std::vector<double> input_std;
};

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mcep::nn
