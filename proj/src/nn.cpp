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

#include "mcep/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "binary_io.hpp"

namespace mcep::nn {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var Var::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Var::leaf(Matrix value, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Var(std::move(node));
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ValidationError("item() needs a 1x1 value");
  return node_->value(0, 0);
}

void backward(const Var& loss) {
  if (!loss) throw ValidationError("backward: empty loss");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ValidationError("backward: loss must be scalar, got " + std::to_string(loss.rows()) +
                          "x" + std::to_string(loss.cols()));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS restricted to nodes that carry gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
  }
}

namespace {

Var make_node(Matrix value, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  throw ValidationError(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
}

Matrix expand(const Matrix& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
    case Broadcast::Same: return b;
    case Broadcast::Row: return b.replicate(rows, 1);
    case Broadcast::Scalar: return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Matrix reduce(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::Same: return g;
    case Broadcast::Row: return g.colwise().sum();
    case Broadcast::Scalar: {
      Matrix out(1, 1);
      out(0, 0) = g.sum();
      return out;
    }
  }
  return g;
}

template <typename F>
Var unary(const Var& a, Matrix value, F local_grad) {
  Node* pa = a.node().get();
  return make_node(std::move(value), {a.node()}, [pa, local_grad](Node& self) {
    if (pa->requires_grad) pa->accumulate(local_grad(self));
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "add");
  Matrix value = a.value() + expand(b.value(), kind, a.rows(), a.cols());
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(value), {a.node(), b.node()}, [pa, pb, kind](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(reduce(self.grad, kind));
  });
}

Var sub(const Var& a, const Var& b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "sub");
  Matrix value = a.value() - expand(b.value(), kind, a.rows(), a.cols());
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(value), {a.node(), b.node()}, [pa, pb, kind](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-reduce(self.grad, kind));
  });
}

Var mul(const Var& a, const Var& b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "mul");
  Matrix bx = expand(b.value(), kind, a.rows(), a.cols());
  Matrix value = a.value().cwiseProduct(bx);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(value), {a.node(), b.node()}, [pa, pb, kind, bx](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(bx));
    if (pb->requires_grad) pb->accumulate(reduce(self.grad.cwiseProduct(pa->value), kind));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                          std::to_string(b.rows()) + " differ");
  }
  Matrix value = a.value() * b.value();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(value), {a.node(), b.node()}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var scale(const Var& a, double c) {
  return unary(a, a.value() * c, [c](const Node& self) -> Matrix { return self.grad * c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, a.value().array() + c, [](const Node& self) -> Matrix { return self.grad; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var tanh(const Var& a) {
  Matrix y = a.value().array().tanh();
  return unary(a, y, [](const Node& self) -> Matrix {
    return self.grad.array() * (1.0 - self.value.array().square());
  });
}

Var relu(const Var& a) {
  Matrix y = a.value().cwiseMax(0.0);
  Node* pa = a.node().get();
  return unary(a, y, [pa](const Node& self) -> Matrix {
    return (pa->value.array() > 0.0).select(self.grad, 0.0);
  });
}

Var exp(const Var& a) {
  Matrix y = a.value().array().exp();
  return unary(a, y, [](const Node& self) -> Matrix {
    return self.grad.cwiseProduct(self.value);
  });
}

Var log(const Var& a) {
  Matrix y = a.value().array().log();
  Node* pa = a.node().get();
  return unary(a, y, [pa](const Node& self) -> Matrix {
    return self.grad.array() / pa->value.array();
  });
}

Var square(const Var& a) {
  Node* pa = a.node().get();
  return unary(a, a.value().array().square(), [pa](const Node& self) -> Matrix {
    return 2.0 * self.grad.array() * pa->value.array();
  });
}

Var softplus(const Var& a) {
  const auto& x = a.value().array();
  Matrix y = x.cwiseMax(0.0) + (-x.abs()).exp().log1p();
  Node* pa = a.node().get();
  return unary(a, y, [pa](const Node& self) -> Matrix {
    Matrix sig = (1.0 / (1.0 + (-pa->value.array()).exp())).matrix();
    return self.grad.cwiseProduct(sig);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix y = a.value().cwiseMax(lo).cwiseMin(hi);
  Node* pa = a.node().get();
  return unary(a, y, [pa, lo, hi](const Node& self) -> Matrix {
    const auto& x = pa->value.array();
    return ((x >= lo) && (x <= hi)).select(self.grad, 0.0);
  });
}

Var minimum(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError("minimum: shapes differ");
  }
  Matrix value = a.value().cwiseMin(b.value());
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(value), {a.node(), b.node()}, [pa, pb](Node& self) {
    const auto take_a = (pa->value.array() <= pb->value.array());
    if (pa->requires_grad) pa->accumulate(take_a.select(self.grad, 0.0));
    if (pb->requires_grad) pb->accumulate(take_a.select(0.0, self.grad));
  });
}

Var sum(const Var& a) {
  Matrix value(1, 1);
  value(0, 0) = a.value().sum();
  const auto rows = a.rows();
  const auto cols = a.cols();
  return unary(a, value, [rows, cols](const Node& self) -> Matrix {
    return Matrix::Constant(rows, cols, self.grad(0, 0));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ValidationError("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  Matrix value = a.value().rowwise().sum();
  const auto cols = a.cols();
  return unary(a, value, [cols](const Node& self) -> Matrix {
    return self.grad.replicate(1, cols);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ValidationError("concat_cols: row counts differ");
  Matrix value(a.rows(), a.cols() + b.cols());
  value << a.value(), b.value();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  const auto ca = a.cols();
  const auto cb = b.cols();
  return make_node(std::move(value), {a.node(), b.node()}, [pa, pb, ca, cb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.leftCols(ca));
    if (pb->requires_grad) pb->accumulate(self.grad.rightCols(cb));
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ValidationError("slice_cols: range out of bounds");
  }
  Matrix value = a.value().middleCols(start, count);
  const auto rows = a.rows();
  const auto cols = a.cols();
  return unary(a, value, [rows, cols, start, count](const Node& self) -> Matrix {
    Matrix g = Matrix::Zero(rows, cols);
    g.middleCols(start, count) = self.grad;
    return g;
  });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

// ---------------------------------------------------------------------------

Parameter::Parameter(Matrix value, std::string name) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = true;
  node_->name = std::move(name);
}

Parameter::Parameter(const Parameter& other) : node_(std::make_shared<Node>()) {
  node_->value = other.node_->value;
  node_->requires_grad = true;
  node_->name = other.node_->name;
}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) {
    node_ = std::make_shared<Node>();
    node_->value = other.node_->value;
    node_->requires_grad = true;
    node_->name = other.node_->name;
  }
  return *this;
}

Matrix Parameter::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

const char* to_string(Activation act) {
  switch (act) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw ValidationError("unknown activation '" + s + "'");
}

Mlp::Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
         Activation activation, Rng& rng, double final_scale, const std::string& name)
    : activation_(activation) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    const double mult = (l + 2 == dims.size()) ? final_scale : 1.0;
    Matrix w(dims[l], dims[l + 1]);
    Matrix b(1, dims[l + 1]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = mult * rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = mult * rng.uniform(-bound, bound);
    const std::string prefix = name + ".l" + std::to_string(l);
    layers_.push_back({Parameter(std::move(w), prefix + ".weight"),
                       Parameter(std::move(b), prefix + ".bias")});
  }
}

Mlp::Mlp(std::vector<Layer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  if (layers_.empty()) throw ValidationError("an MLP needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l].weight.value();
    const auto& b = layers_[l].bias.value();
    if (b.rows() != 1 || b.cols() != w.cols()) {
      throw ValidationError("layer " + std::to_string(l) + ": bias does not match weight width");
    }
    if (l > 0 && layers_[l - 1].weight.value().cols() != w.rows()) {
      throw ValidationError("layer " + std::to_string(l) + ": input width " +
                            std::to_string(w.rows()) + " does not chain with previous output " +
                            std::to_string(layers_[l - 1].weight.value().cols()));
    }
  }
}

namespace {
Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}
}  // namespace

Var Mlp::forward(const Var& x, GradMode mode) const {
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (h.cols() != layer.weight.value().rows()) {
      throw ValidationError("layer " + std::to_string(l) + ": expected input width " +
                            std::to_string(layer.weight.value().rows()) + ", got " +
                            std::to_string(h.cols()));
    }
    const Var w = mode == GradMode::Track ? layer.weight.var() : layer.weight.frozen();
    const Var b = mode == GradMode::Track ? layer.bias.var() : layer.bias.frozen();
    h = add(matmul(h, w), b);
    if (l + 1 < layers_.size()) h = activate(h, activation_);
  }
  return h;
}

Matrix Mlp::predict(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (h.cols() != layer.weight.value().rows()) {
      throw ValidationError("layer " + std::to_string(l) + ": expected input width " +
                            std::to_string(layer.weight.value().rows()) + ", got " +
                            std::to_string(h.cols()));
    }
    Matrix z = h * layer.weight.value();
    z.rowwise() += layer.bias.value().row(0);
    if (l + 1 < layers_.size()) {
      switch (activation_) {
        case Activation::Relu: z = z.cwiseMax(0.0); break;
        case Activation::Tanh: z = z.array().tanh(); break;
        case Activation::Identity: break;
      }
    }
    h = std::move(z);
  }
  return h;
}

std::size_t Mlp::in_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.value().rows());
}
std::size_t Mlp::out_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.value().cols());
}
std::vector<std::size_t> Mlp::hidden_sizes() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    out.push_back(static_cast<std::size_t>(layers_[l].weight.value().cols()));
  }
  return out;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

void Mlp::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

bool Mlp::same_values(const Mlp& other) const {
  if (layers_.size() != other.layers_.size() || activation_ != other.activation_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.weight.value().rows() != b.weight.value().rows() ||
        a.weight.value().cols() != b.weight.value().cols()) {
      return false;
    }
    // Bitwise comparison, so -0.0 != 0.0 and NaN payloads count.
    if (std::memcmp(a.weight.value().data(), b.weight.value().data(),
                    sizeof(double) * a.weight.value().size()) != 0 ||
        std::memcmp(a.bias.value().data(), b.bias.value().data(),
                    sizeof(double) * a.bias.value().size()) != 0) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

void Adam::step(std::span<Parameter* const> params, double lr) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->value().rows(), p->value().cols()));
      v_.push_back(Matrix::Zero(p->value().rows(), p->value().cols()));
    }
  }
  if (m_.size() != params.size()) throw ValidationError("Adam: parameter list changed size");
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value().rows() != m_[i].rows() || params[i]->value().cols() != m_[i].cols()) {
      throw ValidationError("Adam: shape mismatch for " + params[i]->name());
    }
    grads.push_back(params[i]->grad());
    if (!grads.back().allFinite()) {
      throw NumericError("non-finite gradient in " + params[i]->name(), params[i]->name());
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    auto& w = params[i]->mutable_value();
    w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

void ema_update(Mlp& target, const Mlp& online, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("ema_update: eta must lie in (0, 1]");
  auto tp = target.parameters();
  auto op = online.parameters();
  if (tp.size() != op.size()) throw ValidationError("ema_update: network shapes differ");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto& t = tp[i]->mutable_value();
    const auto& o = op[i]->value();
    if (t.rows() != o.rows() || t.cols() != o.cols()) {
      throw ValidationError("ema_update: shape mismatch at " + op[i]->name());
    }
    if (eta == 1.0) {
      t = o;
    } else {
      t = (1.0 - eta) * t + eta * o;
    }
  }
}

// ---------------------------------------------------------------------------

Var deterministic_action(const Mlp& net, const Var& x, GradMode mode) {
  return tanh(net.forward(x, mode));
}

TanhGaussianHead TanhGaussianHead::from_output(const Var& out) {
  if (out.cols() % 2 != 0) throw ValidationError("gaussian head needs an even output width");
  const auto d = out.cols() / 2;
  return {slice_cols(out, 0, d), clamp(slice_cols(out, d, d), kLogStdMin, kLogStdMax)};
}

TanhGaussianHead TanhGaussianHead::from_network(const Mlp& net, const Var& x, GradMode mode) {
  return from_output(net.forward(x, mode));
}

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;
}

Var TanhGaussianHead::log_prob(const Matrix& actions, std::size_t* clamped) const {
  if (actions.rows() != mean.rows() || actions.cols() != mean.cols()) {
    throw ValidationError("log_prob: action shape does not match the head");
  }
  const double lim = 1.0 - kAtanhMargin;
  Matrix a = actions;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double& x = a.data()[i];
    if (std::abs(x) > lim) {
      x = std::copysign(lim, x);
      ++hits;
    }
  }
  if (clamped) *clamped += hits;
  Matrix pre = a.array().atanh();
  // log(1 - a^2) written via the pre-image for accuracy near the bounds.
  const auto softplus_neg2u = (-2.0 * pre.array()).unaryExpr(
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
  Matrix log_jac = 2.0 * (std::log(2.0) - pre.array() - softplus_neg2u);
  const Var u = Var::constant(std::move(pre));
  const Var z = mul(sub(u, mean), exp(neg(log_std)));
  Var per_dim = sub(sub(scale(square(z), -0.5), log_std), Var::constant(log_jac));
  return add_scalar(row_sum(per_dim), -kHalfLog2Pi * static_cast<double>(mean.cols()));
}

std::pair<Var, Var> TanhGaussianHead::sample(const Matrix& noise) const {
  if (noise.rows() != mean.rows() || noise.cols() != mean.cols()) {
    throw ValidationError("sample: noise shape does not match the head");
  }
  const Var xi = Var::constant(noise);
  const Var pre = add(mean, mul(exp(log_std), xi));
  const Var action = tanh(pre);
  // log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))
  const Var log_jac = scale(add_scalar(neg(add(pre, softplus(scale(pre, -2.0)))), std::log(2.0)), 2.0);
  Var per_dim = sub(sub(scale(square(xi), -0.5), log_std), log_jac);
  Var lp = add_scalar(row_sum(per_dim), -kHalfLog2Pi * static_cast<double>(mean.cols()));
  return {action, lp};
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = rng.normal();
  return out;
}

std::pair<Var, Var> gaussian_sample_logprob(const TanhGaussianHead& head, Rng& rng) {
  return head.sample(standard_normal(head.mean.rows(), head.mean.cols(), rng));
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const std::function<Var()>& loss_fn,
                           std::span<Parameter* const> params, double eps, double floor) {
  for (auto* p : params) p->zero_grad();
  const Var loss = loss_fn();
  backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad());

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k]->mutable_value();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + eps;
      const double up = loss_fn().item();
      w.data()[i] = saved - eps;
      const double down = loss_fn().item();
      w.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_parameter = params[k]->name();
        result.worst_index = i;
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

// ---------------------------------------------------------------------------

const char* to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Critic: return "critic";
    case HeadKind::Deterministic: return "deterministic";
    case HeadKind::TanhGaussian: return "tanh_gaussian";
  }
  return "?";
}

namespace {
constexpr char kMagic[4] = {'M', 'C', 'E', 'P'};
}

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  if (ckpt.input_mean.size() != ckpt.input_std.size()) {
    throw ValidationError("checkpoint normaliser mean/std widths differ");
  }
  std::string buf(kMagic, 4);
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(ckpt.head));
  detail::put_u32(buf, static_cast<std::uint32_t>(ckpt.net.activation()));
  const auto& layers = ckpt.net.layers();
  detail::put_u32(buf, static_cast<std::uint32_t>(layers.size()));
  for (const auto& layer : layers) {
    detail::put_u32(buf, static_cast<std::uint32_t>(layer.weight.value().rows()));
    detail::put_u32(buf, static_cast<std::uint32_t>(layer.weight.value().cols()));
  }
  detail::put_u32(buf, static_cast<std::uint32_t>(ckpt.input_mean.size()));
  for (const auto& layer : layers) {
    const auto& w = layer.weight.value();
    for (Eigen::Index i = 0; i < w.size(); ++i) detail::put_f64(buf, w.data()[i]);
    const auto& b = layer.bias.value();
    for (Eigen::Index i = 0; i < b.size(); ++i) detail::put_f64(buf, b.data()[i]);
  }
  for (double v : ckpt.input_mean) detail::put_f64(buf, v);
  for (double v : ckpt.input_std) detail::put_f64(buf, v);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(DataError::Kind::Io, "failed to write checkpoint");
}

Checkpoint load_checkpoint(std::istream& in) {
  const std::string data = detail::read_all(in);
  detail::ByteReader r(data, data.size(), "checkpoint");
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw DataError(DataError::Kind::BadMagic, "not an MCEP checkpoint (bad magic)");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(DataError::Kind::VersionMismatch,
                    "checkpoint version " + std::to_string(version) + " is not supported");
  }
  const auto head = r.u32();
  const auto act = r.u32();
  if (head > 2 || act > 2) throw DataError(DataError::Kind::Format, "checkpoint header is corrupt");
  const auto n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64) {
    throw DataError(DataError::Kind::Format, "checkpoint layer count is invalid");
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto rows = r.u32();
    const auto cols = r.u32();
    shapes.emplace_back(rows, cols);
  }
  const auto norm = r.u32();
  std::vector<Layer> layers;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto [rows, cols] = shapes[l];
    r.need((static_cast<std::size_t>(rows) * cols + cols) * 8);
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = r.f64();
    Matrix b(1, cols);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = r.f64();
    const std::string prefix = "l" + std::to_string(l);
    layers.push_back({Parameter(std::move(w), prefix + ".weight"),
                      Parameter(std::move(b), prefix + ".bias")});
  }
  Checkpoint ckpt;
  try {
    ckpt.net = Mlp(std::move(layers), static_cast<Activation>(act));
  } catch (const ValidationError& e) {
    throw DataError(DataError::Kind::Format, std::string("checkpoint: ") + e.what());
  }
  ckpt.head = static_cast<HeadKind>(head);
  r.need(static_cast<std::size_t>(norm) * 16);
  for (std::uint32_t i = 0; i < norm; ++i) ckpt.input_mean.push_back(r.f64());
  for (std::uint32_t i = 0; i < norm; ++i) ckpt.input_std.push_back(r.f64());
  if (r.remaining() != 0) throw DataError(DataError::Kind::Format, "checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, "cannot open '" + path + "' for writing");
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace mcep::nn
