#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mudal/core.hpp"

namespace mudal {

enum class Activation { relu, leaky_relu, sigmoid, identity };

inline constexpr double kLeakySlope = 0.01;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

namespace detail {

// Process-unique identity. A copy is a different network, so it gets a new id.
class InstanceId {
 public:
  InstanceId() : value_(next()) {}
  InstanceId(const InstanceId&) : value_(next()) {}
  InstanceId& operator=(const InstanceId&) {
    value_ = next();
    return *this;
  }
  InstanceId(InstanceId&&) noexcept = default;
  InstanceId& operator=(InstanceId&&) noexcept = default;
  std::uint64_t value() const { return value_; }

 private:
  static std::uint64_t next() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }
  std::uint64_t value_;
};

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu:
      return x > 0.0 ? x : kLeakySlope * x;
    case Activation::sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::identity:
      return x;
  }
  return x;
}

// Derivative from the pre-activation and the activated value.
inline double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::relu:
      return pre > 0.0 ? 1.0 : 0.0;  // subgradient 0 at the kink
    case Activation::leaky_relu:
      return pre > 0.0 ? 1.0 : kLeakySlope;
    case Activation::sigmoid:
      return post * (1.0 - post);
    case Activation::identity:
      return 1.0;
  }
  return 1.0;
}

}  // namespace detail

/// Fully connected feed-forward network, 64-bit throughout.
///
/// Parameters are only reachable for writing through mutable_layer() or
/// set_param(), both of which bump revision() so an ActivationTrace taken
/// before the mutation is rejected by backward().
class DenseNet {
 public:
  DenseNet() = default;

  explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("DenseNet: at least one layer required");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      if (static_cast<std::size_t>(l.bias.size()) != l.out_dim())
        throw ShapeError("DenseNet: layer " + std::to_string(k) + " bias length " +
                         std::to_string(l.bias.size()) + " != out " + std::to_string(l.out_dim()));
      if (k > 0 && layers_[k - 1].out_dim() != l.in_dim())
        throw ShapeError("DenseNet: layer " + std::to_string(k - 1) + " out " +
                         std::to_string(layers_[k - 1].out_dim()) + " does not chain into layer " +
                         std::to_string(k) + " in " + std::to_string(l.in_dim()));
    }
  }

  /// Random initialization: He-uniform for (leaky) ReLU layers, Glorot-uniform
  /// otherwise, zero biases. `widths` has one more entry than `activations`.
  static DenseNet random(std::span<const std::size_t> widths, std::span<const Activation> activations,
                         Rng& rng) {
    if (widths.size() != activations.size() + 1 || activations.empty())
      throw ShapeError("DenseNet::random: need widths.size() == activations.size() + 1 >= 2");
    std::vector<DenseLayer> layers;
    layers.reserve(activations.size());
    for (std::size_t k = 0; k < activations.size(); ++k) {
      const auto fan_in = static_cast<double>(widths[k]);
      const auto fan_out = static_cast<double>(widths[k + 1]);
      const bool rectifier =
          activations[k] == Activation::relu || activations[k] == Activation::leaky_relu;
      const double limit = rectifier ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
      DenseLayer layer;
      layer.weight.resize(static_cast<Eigen::Index>(widths[k + 1]), static_cast<Eigen::Index>(widths[k]));
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
          layer.weight(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
      layer.bias = Vector::Zero(static_cast<Eigen::Index>(widths[k + 1]));
      layer.activation = activations[k];
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
  }

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
  std::size_t num_layers() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  const DenseLayer& layer(std::size_t k) const { return layers_.at(k); }
  DenseLayer& mutable_layer(std::size_t k) {
    ++revision_;
    return layers_.at(k);
  }

  std::uint64_t id() const { return id_.value(); }
  std::uint64_t revision() const { return revision_; }

  // Flat parameter view: per layer, weights row-major then bias.
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
  double param(std::size_t index) const {
    const auto [k, off] = locate(index);
    const auto& l = layers_[k];
    if (off < static_cast<std::size_t>(l.weight.size())) return l.weight.data()[off];
    return l.bias[static_cast<Eigen::Index>(off - static_cast<std::size_t>(l.weight.size()))];
  }
  void set_param(std::size_t index, double value) {
    ++revision_;
    const auto [k, off] = locate(index);
    auto& l = layers_[k];
    if (off < static_cast<std::size_t>(l.weight.size()))
      l.weight.data()[off] = value;
    else
      l.bias[static_cast<Eigen::Index>(off - static_cast<std::size_t>(l.weight.size()))] = value;
  }

  bool all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(),
                       [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
  }

  bool same_parameters(const DenseNet& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& a = layers_[k];
      const auto& b = other.layers_[k];
      if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
          a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias)
        return false;
    }
    return true;
  }

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t index) const {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto n = static_cast<std::size_t>(layers_[k].weight.size() + layers_[k].bias.size());
      if (index < n) return {k, index};
      index -= n;
    }
    throw InvalidArgument("DenseNet: parameter index out of range");
  }

  std::vector<DenseLayer> layers_;
  detail::InstanceId id_;
  std::uint64_t revision_ = 0;
};

/// Mini-batch: features plus optional labels, domain ids and per-sample weights.
struct Batch {
  Matrix features;
  std::optional<std::vector<int>> labels;
  std::vector<int> domain_ids;
  std::vector<double> weights;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }

  void validate(std::size_t n_classes = 0, std::size_t n_domains = 0) const {
    const auto b = size();
    if (b == 0) throw ShapeError("Batch: empty");
    if (labels) {
      if (labels->size() != b) throw ShapeError("Batch: labels length mismatch");
      if (n_classes > 0)
        for (int y : *labels)
          if (y < 0 || static_cast<std::size_t>(y) >= n_classes) throw InvalidArgument("Batch: label out of range");
    }
    if (!domain_ids.empty()) {
      if (domain_ids.size() != b) throw ShapeError("Batch: domain_ids length mismatch");
      if (n_domains > 0)
        for (int d : domain_ids)
          if (d < 0 || static_cast<std::size_t>(d) >= n_domains) throw InvalidArgument("Batch: domain id out of range");
    }
    if (!weights.empty()) {
      if (weights.size() != b) throw ShapeError("Batch: weights length mismatch");
      for (double w : weights)
        if (!std::isfinite(w) || w < 0.0) throw InvalidArgument("Batch: weights must be finite and >= 0");
    }
  }
};

struct ActivationTrace {
  std::uint64_t net_id = 0;
  std::uint64_t net_revision = 0;
  Matrix input;
  std::vector<Matrix> pre;   // per layer, before activation
  std::vector<Matrix> post;  // per layer, after activation

  const Matrix& output() const { return post.back(); }
};

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  static Gradients zeros_like(const DenseNet& net) {
    Gradients g;
    for (std::size_t k = 0; k < net.num_layers(); ++k) {
      g.weight.push_back(Matrix::Zero(net.layer(k).weight.rows(), net.layer(k).weight.cols()));
      g.bias.push_back(Vector::Zero(net.layer(k).bias.size()));
    }
    return g;
  }

  // Parameter gradients only; input gradients refer to different batches.
  Gradients& operator+=(const Gradients& other) {
    if (weight.empty()) {
      weight = other.weight;
      bias = other.bias;
      return *this;
    }
    if (other.weight.size() != weight.size()) throw ShapeError("Gradients: layer count mismatch");
    for (std::size_t k = 0; k < weight.size(); ++k) {
      weight[k] += other.weight[k];
      bias[k] += other.bias[k];
    }
    return *this;
  }

  Gradients& operator*=(double s) {
    for (auto& w : weight) w *= s;
    for (auto& b : bias) b *= s;
    input *= s;
    return *this;
  }

  bool all_finite() const {
    for (std::size_t k = 0; k < weight.size(); ++k)
      if (!weight[k].allFinite() || !bias[k].allFinite()) return false;
    return true;
  }

  double param(std::size_t index) const {
    for (std::size_t k = 0; k < weight.size(); ++k) {
      const auto nw = static_cast<std::size_t>(weight[k].size());
      const auto n = nw + static_cast<std::size_t>(bias[k].size());
      if (index < n) return index < nw ? weight[k].data()[index] : bias[k][static_cast<Eigen::Index>(index - nw)];
      index -= n;
    }
    throw InvalidArgument("Gradients: parameter index out of range");
  }
};

inline ActivationTrace forward(const DenseNet& net, const Matrix& x) {
  if (net.empty()) throw ShapeError("forward: empty network");
  if (static_cast<std::size_t>(x.cols()) != net.input_dim())
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(net.input_dim()) + " (batch " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()) + ")");
  ActivationTrace trace;
  trace.net_id = net.id();
  trace.net_revision = net.revision();
  trace.input = x;
  trace.pre.reserve(net.num_layers());
  trace.post.reserve(net.num_layers());
  const Matrix* current = &trace.input;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const auto& l = net.layer(k);
    Matrix pre = (*current) * l.weight.transpose();
    pre.rowwise() += l.bias.transpose();
    Matrix post = pre.unaryExpr([a = l.activation](double v) { return detail::activate(a, v); });
    trace.pre.push_back(std::move(pre));
    trace.post.push_back(std::move(post));
    current = &trace.post.back();
  }
  if (!trace.output().allFinite()) throw NumericalError("forward: non-finite network output");
  return trace;
}

inline ActivationTrace forward(const DenseNet& net, const Batch& batch) {
  batch.validate();
  return forward(net, batch.features);
}

/// Reverse pass. `output_grad` is dLoss/dOutput for every row of the batch.
inline Gradients backward(const DenseNet& net, const ActivationTrace& trace, const Matrix& output_grad) {
  if (trace.net_id != net.id() || trace.net_revision != net.revision())
    throw InvalidArgument("backward: stale trace (network changed or differs since forward)");
  if (trace.post.size() != net.num_layers()) throw ShapeError("backward: trace depth mismatch");
  if (output_grad.rows() != trace.output().rows() || output_grad.cols() != trace.output().cols())
    throw ShapeError("backward: output_grad is " + std::to_string(output_grad.rows()) + "x" +
                     std::to_string(output_grad.cols()) + ", output is " + std::to_string(trace.output().rows()) +
                     "x" + std::to_string(trace.output().cols()));
  Gradients g;
  const auto n = net.num_layers();
  g.weight.resize(n);
  g.bias.resize(n);
  Matrix upstream = output_grad;
  for (std::size_t kk = n; kk-- > 0;) {
    const auto& l = net.layer(kk);
    Matrix delta = upstream;
    if (l.activation != Activation::identity) {
      const auto& pre = trace.pre[kk];
      const auto& post = trace.post[kk];
      for (Eigen::Index r = 0; r < delta.rows(); ++r)
        for (Eigen::Index c = 0; c < delta.cols(); ++c)
          delta(r, c) *= detail::activate_grad(l.activation, pre(r, c), post(r, c));
    }
    const Matrix& layer_input = kk == 0 ? trace.input : trace.post[kk - 1];
    g.weight[kk] = delta.transpose() * layer_input;
    g.bias[kk] = delta.colwise().sum().transpose();
    upstream = delta * l.weight;
  }
  g.input = std::move(upstream);
  if (!g.all_finite() || !g.input.allFinite()) throw NumericalError("backward: non-finite gradient");
  return g;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<Vector> m_bias, v_bias;

  AdamState() = default;
  explicit AdamState(const DenseNet& net, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
      : beta1(b1), beta2(b2), eps(e) {
    for (std::size_t k = 0; k < net.num_layers(); ++k) {
      const auto& l = net.layer(k);
      m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      m_bias.push_back(Vector::Zero(l.bias.size()));
      v_bias.push_back(Vector::Zero(l.bias.size()));
    }
  }
};

/// One Adam update. Non-finite gradients abort the step with the network
/// and state untouched.
inline void adam_step(DenseNet& net, const Gradients& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("adam_step: lr must be > 0");
  const auto n = net.num_layers();
  if (grads.weight.size() != n || state.m_weight.size() != n)
    throw ShapeError("adam_step: gradient/state layer count does not match network");
  for (std::size_t k = 0; k < n; ++k) {
    const auto& l = net.layer(k);
    if (grads.weight[k].rows() != l.weight.rows() || grads.weight[k].cols() != l.weight.cols() ||
        grads.bias[k].size() != l.bias.size() || state.m_weight[k].rows() != l.weight.rows() ||
        state.m_weight[k].cols() != l.weight.cols())
      throw ShapeError("adam_step: shape mismatch at layer " + std::to_string(k));
  }
  if (!grads.all_finite()) throw NumericalError("adam_step: non-finite gradient, step aborted");

  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2, eps = state.eps;
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < n; ++k) {
    auto& l = net.mutable_layer(k);
    update(l.weight, grads.weight[k], state.m_weight[k], state.v_weight[k]);
    update(l.bias, grads.bias[k], state.m_bias[k], state.v_bias[k]);
  }
  if (!net.all_finite()) throw NumericalError("adam_step: parameters became non-finite");
}

// ---------------------------------------------------------------------------
// Losses

struct SoftmaxCeResult {
  double loss = 0.0;  // weighted mean
  Matrix grad;        // dloss/dlogits
  Matrix probs;       // softmax(logits / T)
};

namespace detail {

inline void check_weights(std::span<const double> weights, std::size_t b, const char* who) {
  if (weights.size() != b) throw ShapeError(std::string(who) + ": weights length mismatch");
  for (double w : weights)
    if (!std::isfinite(w) || w < 0.0) throw InvalidArgument(std::string(who) + ": weights must be finite and >= 0");
}

inline Matrix softmax_rows(const Matrix& logits, double temperature) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(r, c) = std::exp((logits(r, c) - mx) / temperature);
      z += p(r, c);
    }
    p.row(r) /= z;
  }
  return p;
}

// Unnormalized sum_b w_b * CE_b and its gradient.
inline SoftmaxCeResult softmax_ce_sum(const Matrix& logits, std::span<const int> labels, double temperature,
                                      std::span<const double> weights) {
  if (!(temperature > 0.0)) throw InvalidArgument("softmax_ce: temperature must be > 0");
  const auto b = static_cast<std::size_t>(logits.rows());
  if (labels.size() != b) throw ShapeError("softmax_ce: labels length mismatch");
  check_weights(weights, b, "softmax_ce");
  SoftmaxCeResult out;
  out.probs = softmax_rows(logits, temperature);
  out.grad = out.probs;
  for (std::size_t r = 0; r < b; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols()) throw InvalidArgument("softmax_ce: label out of range");
    const auto ri = static_cast<Eigen::Index>(r);
    const double mx = logits.row(ri).maxCoeff();
    double lse = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) lse += std::exp((logits(ri, c) - mx) / temperature);
    const double nll = std::log(lse) - (logits(ri, y) - mx) / temperature;
    out.loss += weights[r] * nll;
    out.grad(ri, y) -= 1.0;
    out.grad.row(ri) *= weights[r] / temperature;
  }
  return out;
}

}  // namespace detail

/// Weighted mean cross-entropy of softmax(logits / T).
inline SoftmaxCeResult softmax_ce(const Matrix& logits, std::span<const int> labels, double temperature,
                                  std::span<const double> weights) {
  auto out = detail::softmax_ce_sum(logits, labels, temperature, weights);
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw InvalidArgument("softmax_ce: all weights are zero");
  out.loss /= total;
  out.grad /= total;
  return out;
}

struct BceResult {
  double loss = 0.0;  // weighted mean
  Vector grad;        // dloss/dlogit
};

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline BceResult sigmoid_bce_sum(const Vector& logit, std::span<const int> target, std::span<const double> weights) {
  const auto b = static_cast<std::size_t>(logit.size());
  if (target.size() != b) throw ShapeError("sigmoid_bce: target length mismatch");
  check_weights(weights, b, "sigmoid_bce");
  BceResult out;
  out.grad.resize(logit.size());
  for (std::size_t r = 0; r < b; ++r) {
    const int t = target[r];
    if (t != 0 && t != 1) throw InvalidArgument("sigmoid_bce: target must be 0 or 1");
    const double z = logit[static_cast<Eigen::Index>(r)];
    // -[t log s(z) + (1-t) log(1-s(z))] = softplus(z) - t z
    out.loss += weights[r] * (softplus(z) - t * z);
    out.grad[static_cast<Eigen::Index>(r)] = weights[r] * (activate(Activation::sigmoid, z) - t);
  }
  return out;
}

}  // namespace detail

inline BceResult sigmoid_bce(const Vector& logit, std::span<const int> target, std::span<const double> weights) {
  auto out = detail::sigmoid_bce_sum(logit, target, weights);
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw InvalidArgument("sigmoid_bce: all weights are zero");
  out.loss /= total;
  out.grad /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

/// Loss as a function of the network output: returns (loss, dloss/doutput).
using OutputLoss = std::function<std::pair<double, Matrix>(const Matrix& output)>;

/// Max over parameters of |analytic - central difference| / max(|a|, |fd|, floor).
/// Central differences at eps = 1e-6 carry about 1e-10 of roundoff, so entries
/// below `floor` are held to an absolute error of floor * tolerance instead.
inline double grad_check(const DenseNet& net, const Batch& batch, const OutputLoss& loss_fn, double eps = 1e-6,
                         double floor = 1e-6) {
  DenseNet probe = net;
  const auto trace = forward(probe, batch.features);
  const auto [loss, dout] = loss_fn(trace.output());
  (void)loss;
  const auto analytic = backward(probe, trace, dout);
  double worst = 0.0;
  for (std::size_t p = 0; p < probe.num_params(); ++p) {
    const double orig = probe.param(p);
    probe.set_param(p, orig + eps);
    const double up = loss_fn(forward(probe, batch.features).output()).first;
    probe.set_param(p, orig - eps);
    const double down = loss_fn(forward(probe, batch.features).output()).first;
    probe.set_param(p, orig);
    const double fd = (up - down) / (2.0 * eps);
    const double a = analytic.param(p);
    const double denom = std::max({std::abs(a), std::abs(fd), floor});
    worst = std::max(worst, std::abs(a - fd) / denom);
  }
  return worst;
}

/// Squared loss 0.5 * sum (out - target)^2; handy for linear-net checks.
inline OutputLoss squared_loss(Matrix target) {
  return [target = std::move(target)](const Matrix& out) {
    Matrix diff = out - target;
    return std::pair<double, Matrix>{0.5 * diff.squaredNorm(), diff};
  };
}

inline OutputLoss ce_loss(std::vector<int> labels, double temperature, std::vector<double> weights) {
  return [labels = std::move(labels), temperature, weights = std::move(weights)](const Matrix& out) {
    auto r = softmax_ce(out, labels, temperature, weights);
    return std::pair<double, Matrix>{r.loss, std::move(r.grad)};
  };
}

inline OutputLoss bce_loss(std::vector<int> targets, std::vector<double> weights) {
  return [targets = std::move(targets), weights = std::move(weights)](const Matrix& out) {
    if (out.cols() != 1) throw ShapeError("bce_loss: network must have a single output");
    Vector logit = out.col(0);
    auto r = sigmoid_bce(logit, targets, weights);
    Matrix g = r.grad;
    return std::pair<double, Matrix>{r.loss, std::move(g)};
  };
}

}  // namespace mudal
