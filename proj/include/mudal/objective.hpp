#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mudal/core.hpp"
#include "mudal/data.hpp"
#include "mudal/nn.hpp"
#include "mudal/simplex.hpp"

namespace mudal {

enum class Variant { cal, cal_alpha, cal_fa, vanilla };
enum class DomainCode { onehot, scalar };

inline bool trains_discriminator(Variant v) { return v != Variant::vanilla; }
inline bool updates_alpha(Variant v) { return v == Variant::cal || v == Variant::cal_alpha; }
inline bool aligns_features(Variant v) { return v == Variant::cal || v == Variant::cal_fa; }
inline bool uses_heads(Variant v) { return v == Variant::cal || v == Variant::cal_alpha; }

struct Architecture {
  std::size_t input_dim = 2;
  std::size_t n_classes = 2;
  std::size_t n_domains = 1;
  std::size_t feature_dim = 16;
  std::vector<std::size_t> encoder_hidden = {32};
  std::vector<std::size_t> classifier_hidden = {32};  // shared trunk, at least one layer
  std::vector<std::size_t> discriminator_hidden = {32, 32};
  DomainCode code = DomainCode::onehot;
};

/// Encoder e, shared classifier h, per-domain heads h_i and conditional
/// discriminator f.
///
/// h and every h_i are the shared `trunk` followed by their own final linear
/// layer, so they agree on all non-final parameters by construction.
struct ModelBundle {
  DenseNet encoder;              // D -> Z
  DenseNet trunk;                // Z -> H
  DenseNet classifier;           // H -> C (h)
  std::vector<DenseNet> heads;   // H -> C (h_i)
  DenseNet discriminator;        // Z + code -> 1 logit
  DomainCode code = DomainCode::onehot;
  std::size_t n_domains = 0;
  bool discriminator_trained = false;

  static ModelBundle create(const Architecture& a, std::uint64_t seed) {
    if (a.classifier_hidden.empty()) throw InvalidArgument("Architecture: classifier needs a hidden layer");
    if (a.n_domains == 0) throw InvalidArgument("Architecture: n_domains must be >= 1");
    ModelBundle b;
    b.code = a.code;
    b.n_domains = a.n_domains;
    Rng rng = make_rng(seed, 501);
    auto build = [&rng](std::vector<std::size_t> widths, Activation hidden, Activation last) {
      std::vector<Activation> acts(widths.size() - 1, hidden);
      acts.back() = last;
      return DenseNet::random(widths, acts, rng);
    };
    std::vector<std::size_t> enc{a.input_dim};
    enc.insert(enc.end(), a.encoder_hidden.begin(), a.encoder_hidden.end());
    enc.push_back(a.feature_dim);
    b.encoder = build(enc, Activation::relu, Activation::relu);

    std::vector<std::size_t> trunk{a.feature_dim};
    trunk.insert(trunk.end(), a.classifier_hidden.begin(), a.classifier_hidden.end());
    b.trunk = build(trunk, Activation::relu, Activation::relu);
    const auto h = a.classifier_hidden.back();
    b.classifier = build({h, a.n_classes}, Activation::identity, Activation::identity);
    for (std::size_t i = 0; i < a.n_domains; ++i)
      b.heads.push_back(build({h, a.n_classes}, Activation::identity, Activation::identity));

    std::vector<std::size_t> disc{a.feature_dim + b.code_width()};
    disc.insert(disc.end(), a.discriminator_hidden.begin(), a.discriminator_hidden.end());
    disc.push_back(1);
    b.discriminator = build(disc, Activation::leaky_relu, Activation::identity);
    return b;
  }

  std::size_t code_width() const { return code == DomainCode::onehot ? n_domains : 1; }
  std::size_t n_classes() const { return classifier.output_dim(); }
};

/// [z | code(domain)]. One-hot code, or the scalar (domain+1)/N.
inline Matrix discriminator_input(const Matrix& z, std::size_t domain, DomainCode code, std::size_t n_domains) {
  const auto width = code == DomainCode::onehot ? n_domains : 1;
  Matrix out(z.rows(), z.cols() + static_cast<Eigen::Index>(width));
  out.leftCols(z.cols()) = z;
  out.rightCols(static_cast<Eigen::Index>(width)).setZero();
  if (code == DomainCode::onehot)
    out.col(z.cols() + static_cast<Eigen::Index>(domain)).setOnes();
  else
    out.col(z.cols()).setConstant(static_cast<double>(domain + 1) / static_cast<double>(n_domains));
  return out;
}

/// Samples of N domains stacked row-wise; domain j owns rows
/// [offset[j], offset[j+1]). `labels` is empty for unlabeled stacks.
struct DomainStack {
  Matrix x;
  std::vector<int> labels;
  std::vector<std::size_t> offset{0};

  std::size_t n_domains() const { return offset.size() - 1; }
  std::size_t size(std::size_t j) const { return offset.at(j + 1) - offset.at(j); }
  std::size_t rows() const { return offset.back(); }

  static DomainStack build(const std::vector<Matrix>& parts, const std::vector<std::vector<int>>& labels = {}) {
    DomainStack s;
    Eigen::Index total = 0, cols = 0;
    for (const auto& p : parts) {
      total += p.rows();
      if (p.rows() > 0) cols = p.cols();
    }
    s.x.resize(total, cols);
    Eigen::Index r = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
      if (parts[j].rows() > 0) {
        if (parts[j].cols() != cols) throw ShapeError("DomainStack: feature width differs between domains");
        s.x.middleRows(r, parts[j].rows()) = parts[j];
      }
      r += parts[j].rows();
      s.offset.push_back(static_cast<std::size_t>(r));
      if (!labels.empty()) {
        if (labels[j].size() != static_cast<std::size_t>(parts[j].rows()))
          throw ShapeError("DomainStack: label count mismatch in domain " + std::to_string(j));
        s.labels.insert(s.labels.end(), labels[j].begin(), labels[j].end());
      }
    }
    return s;
  }
};

namespace detail {

inline int argmax_row(const Matrix& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return static_cast<int>(best);
}

inline void warn_empty_domain(std::size_t j, const char* term) {
  std::clog << "warning: labeled domain " << j << " is empty; its " << term << " contribution is 0\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Objective terms. All take encoder features z = e(x) and return gradients
// with respect to those features so a caller can chain through the encoder.

struct ClassifierTerm {
  double value = 0.0;
  std::vector<double> domain_ce;     // mean CE per labeled domain
  std::vector<double> domain_error;  // 0/1 error per labeled domain
  Gradients trunk;
  Gradients classifier;
  Matrix feature_grad;  // d value / d z
};

struct HeadTerm {
  double value = 0.0;
  Matrix pair_ce;     // (i, j): mean CE of h_i on L_j
  Matrix pair_error;  // (i, j): 0/1 error of h_i on L_j
  Gradients trunk;
  std::vector<Gradients> heads;
  Matrix feature_grad;
};

struct DiscriminatorTerm {
  double value = 0.0;
  Vector original_bce;   // (i): mean BCE of O_i against target 1
  Matrix pair_bce;       // (i, j): mean BCE of L_j under code i against target 0
  Vector original_error; // (i): fraction of O_i judged surrogate (f < 0.5)
  Matrix pair_error;     // (i, j): fraction of L_j judged original under code i (f >= 0.5)
  Vector accuracy;       // (i): 1 - (original_error_i + sum_j alpha_ij pair_error_ij) / 2
  Gradients discriminator;
  Matrix original_feature_grad;
  Matrix labeled_feature_grad;
};

/// V_h = sum_j alpha_j * mean_{L_j} CE(h(z), y), alpha_j the column importance.
inline ClassifierTerm compute_vh(const ModelBundle& b, const Matrix& z, const DomainStack& labeled,
                                 const SimilarityMatrix& alpha, const ActivationTrace* trunk_trace = nullptr) {
  const auto n = labeled.n_domains();
  if (alpha.size() != n) throw ShapeError("compute_vh: alpha size does not match labeled domains");
  if (static_cast<std::size_t>(z.rows()) != labeled.rows()) throw ShapeError("compute_vh: feature rows mismatch");
  const Vector cols = column_importance(alpha);
  ActivationTrace local;
  if (!trunk_trace) local = forward(b.trunk, z);
  const auto& tt = trunk_trace ? *trunk_trace : local;
  const auto logits = forward(b.classifier, tt.output());

  std::vector<double> w(labeled.rows(), 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (labeled.size(j) == 0) {
      if (cols[static_cast<Eigen::Index>(j)] > 0.0) detail::warn_empty_domain(j, "V_h");
      continue;
    }
    const double wj = cols[static_cast<Eigen::Index>(j)] / static_cast<double>(labeled.size(j));
    for (auto r = labeled.offset[j]; r < labeled.offset[j + 1]; ++r) w[r] = wj;
  }
  const auto ce = detail::softmax_ce_sum(logits.output(), labeled.labels, 1.0, w);

  ClassifierTerm out;
  out.value = ce.loss;
  out.domain_ce.assign(n, 0.0);
  out.domain_error.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (auto r = labeled.offset[j]; r < labeled.offset[j + 1]; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      out.domain_ce[j] -= std::log(std::max(ce.probs(ri, labeled.labels[r]), 1e-300));
      out.domain_error[j] += detail::argmax_row(logits.output(), ri) != labeled.labels[r];
    }
    if (labeled.size(j) > 0) {
      out.domain_ce[j] /= static_cast<double>(labeled.size(j));
      out.domain_error[j] /= static_cast<double>(labeled.size(j));
    }
  }
  out.classifier = backward(b.classifier, logits, ce.grad);
  out.trunk = backward(b.trunk, tt, out.classifier.input);
  out.feature_grad = std::move(out.trunk.input);
  return out;
}

/// V_lambda = (1/N) sum_i sum_j alpha_ij * mean_{L_j} CE(h_i(z), y).
inline HeadTerm compute_vlambda(const ModelBundle& b, const Matrix& z, const DomainStack& labeled,
                                const SimilarityMatrix& alpha, const ActivationTrace* trunk_trace = nullptr) {
  const auto n = labeled.n_domains();
  if (alpha.size() != n || b.heads.size() != n) throw ShapeError("compute_vlambda: domain count mismatch");
  if (static_cast<std::size_t>(z.rows()) != labeled.rows()) throw ShapeError("compute_vlambda: feature rows mismatch");
  ActivationTrace local;
  if (!trunk_trace) local = forward(b.trunk, z);
  const auto& tt = trunk_trace ? *trunk_trace : local;
  const auto& hidden = tt.output();

  HeadTerm out;
  const auto ni = static_cast<Eigen::Index>(n);
  out.pair_ce = Matrix::Zero(ni, ni);
  out.pair_error = Matrix::Zero(ni, ni);
  Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());
  std::vector<double> w(labeled.rows());
  for (std::size_t i = 0; i < n; ++i) {
    const auto logits = forward(b.heads[i], hidden);
    for (std::size_t j = 0; j < n; ++j) {
      const double wj = labeled.size(j) ? alpha(i, j) / (static_cast<double>(n) * static_cast<double>(labeled.size(j))) : 0.0;
      for (auto r = labeled.offset[j]; r < labeled.offset[j + 1]; ++r) w[r] = wj;
    }
    const auto ce = detail::softmax_ce_sum(logits.output(), labeled.labels, 1.0, w);
    out.value += ce.loss;
    for (std::size_t j = 0; j < n; ++j) {
      if (labeled.size(j) == 0) continue;
      double sum_ce = 0.0, err = 0.0;
      for (auto r = labeled.offset[j]; r < labeled.offset[j + 1]; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        sum_ce -= std::log(std::max(ce.probs(ri, labeled.labels[r]), 1e-300));
        err += detail::argmax_row(logits.output(), ri) != labeled.labels[r];
      }
      out.pair_ce(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sum_ce / static_cast<double>(labeled.size(j));
      out.pair_error(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = err / static_cast<double>(labeled.size(j));
    }
    auto g = backward(b.heads[i], logits, ce.grad);
    d_hidden += g.input;
    out.heads.push_back(std::move(g));
  }
  out.trunk = backward(b.trunk, tt, d_hidden);
  out.feature_grad = std::move(out.trunk.input);
  return out;
}

/// Discriminator loss on raw features; the workhorse behind compute_vd.
/// V_d = (1/2N) sum_i { mean_{O_i} BCE(f(z,i), 1) + sum_j alpha_ij mean_{L_j} BCE(f(z,i), 0) }.
inline DiscriminatorTerm discriminator_term(const DenseNet& disc, DomainCode code, const Matrix& z_original,
                                            const DomainStack& original, const Matrix& z_labeled,
                                            const DomainStack& labeled, const SimilarityMatrix& alpha,
                                            bool with_gradients = true) {
  const auto n = original.n_domains();
  if (labeled.n_domains() != n || alpha.size() != n) throw ShapeError("compute_vd: domain count mismatch");
  if (static_cast<std::size_t>(z_original.rows()) != original.rows() ||
      static_cast<std::size_t>(z_labeled.rows()) != labeled.rows())
    throw ShapeError("compute_vd: feature rows mismatch");
  for (std::size_t i = 0; i < n; ++i)
    if (original.size(i) == 0) throw InvalidArgument("compute_vd: original domain " + std::to_string(i) + " is empty");

  const auto zc = z_original.cols();
  const auto n_labeled = static_cast<Eigen::Index>(labeled.rows());
  const auto code_w = static_cast<Eigen::Index>(code == DomainCode::onehot ? n : 1);
  // Block i holds O_i then every labeled sample, all under code i.
  std::vector<Eigen::Index> block(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) block[i + 1] = block[i] + static_cast<Eigen::Index>(original.size(i)) + n_labeled;
  Matrix input(block[n], zc + code_w);
  std::vector<int> target(static_cast<std::size_t>(input.rows()));
  std::vector<double> weight(static_cast<std::size_t>(input.rows()));
  const double inv2n = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto base = block[i];
    const auto oi = static_cast<Eigen::Index>(original.offset[i]);
    const auto ni = static_cast<Eigen::Index>(original.size(i));
    input.block(base, 0, ni, zc) = z_original.middleRows(oi, ni);
    input.block(base + ni, 0, z_labeled.rows(), zc) = z_labeled;
    const auto rows = ni + z_labeled.rows();
    input.block(base, zc, rows, code_w).setZero();
    if (code == DomainCode::onehot)
      input.block(base, zc + static_cast<Eigen::Index>(i), rows, 1).setOnes();
    else
      input.block(base, zc, rows, 1).setConstant(static_cast<double>(i + 1) / static_cast<double>(n));
    for (Eigen::Index r = 0; r < ni; ++r) {
      target[static_cast<std::size_t>(base + r)] = 1;
      weight[static_cast<std::size_t>(base + r)] = inv2n / static_cast<double>(ni);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double wj = labeled.size(j) ? alpha(i, j) * inv2n / static_cast<double>(labeled.size(j)) : 0.0;
      for (auto r = labeled.offset[j]; r < labeled.offset[j + 1]; ++r) {
        const auto row = static_cast<std::size_t>(base + ni) + r;
        target[row] = 0;
        weight[row] = wj;
      }
    }
  }
  const auto trace = forward(disc, input);
  const Vector logit = trace.output().col(0);
  const auto bce = detail::sigmoid_bce_sum(logit, target, weight);

  DiscriminatorTerm out;
  out.value = bce.loss;
  const auto nn = static_cast<Eigen::Index>(n);
  out.original_bce = Vector::Zero(nn);
  out.original_error = Vector::Zero(nn);
  out.pair_bce = Matrix::Zero(nn, nn);
  out.pair_error = Matrix::Zero(nn, nn);
  out.accuracy = Vector::Zero(nn);
  for (std::size_t i = 0; i < n; ++i) {
    const auto base = block[i];
    const auto ni = static_cast<Eigen::Index>(original.size(i));
    const auto ii = static_cast<Eigen::Index>(i);
    for (Eigen::Index r = 0; r < ni; ++r) {
      const double zv = logit[base + r];
      out.original_bce[ii] += detail::softplus(zv) - zv;
      out.original_error[ii] += zv < 0.0;
    }
    out.original_bce[ii] /= static_cast<double>(ni);
    out.original_error[ii] /= static_cast<double>(ni);
    double weighted = out.original_error[ii];
    for (std::size_t j = 0; j < n; ++j) {
      if (labeled.size(j) == 0) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      for (auto r = labeled.offset[j]; r < labeled.offset[j + 1]; ++r) {
        const double zv = logit[base + ni + static_cast<Eigen::Index>(r)];
        out.pair_bce(ii, jj) += detail::softplus(zv);
        out.pair_error(ii, jj) += zv >= 0.0;
      }
      out.pair_bce(ii, jj) /= static_cast<double>(labeled.size(j));
      out.pair_error(ii, jj) /= static_cast<double>(labeled.size(j));
      weighted += alpha(i, j) * out.pair_error(ii, jj);
    }
    out.accuracy[ii] = 1.0 - 0.5 * weighted;
  }
  if (!with_gradients) return out;

  Matrix g = bce.grad;
  out.discriminator = backward(disc, trace, g);
  out.original_feature_grad = Matrix::Zero(z_original.rows(), zc);
  out.labeled_feature_grad = Matrix::Zero(z_labeled.rows(), zc);
  for (std::size_t i = 0; i < n; ++i) {
    const auto base = block[i];
    const auto oi = static_cast<Eigen::Index>(original.offset[i]);
    const auto ni = static_cast<Eigen::Index>(original.size(i));
    out.original_feature_grad.middleRows(oi, ni) += out.discriminator.input.block(base, 0, ni, zc);
    out.labeled_feature_grad += out.discriminator.input.block(base + ni, 0, z_labeled.rows(), zc);
  }
  out.discriminator.input.resize(0, 0);
  return out;
}

inline DiscriminatorTerm compute_vd(const ModelBundle& b, const Matrix& z_original, const DomainStack& original,
                                    const Matrix& z_labeled, const DomainStack& labeled, const SimilarityMatrix& alpha,
                                    bool with_gradients = true) {
  return discriminator_term(b.discriminator, b.code, z_original, original, z_labeled, labeled, alpha, with_gradients);
}

// ---------------------------------------------------------------------------
// Similarity weights

/// Per-entry coefficients of the 0/1 objective's alpha-dependent part:
/// C_ij = err(h, L_j)/N + err(h_i, L_j)/N - lambda_d * pair_error_ij / (2N).
/// `head_error` may be empty (variants without heads).
inline Matrix alpha_coefficients(std::span<const double> classifier_error, const Matrix& head_error,
                                 const Matrix& pair_error, double lambda_d) {
  const auto n = static_cast<Eigen::Index>(classifier_error.size());
  if (pair_error.rows() != n || pair_error.cols() != n) throw ShapeError("alpha_coefficients: shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      c(i, j) = inv_n * classifier_error[static_cast<std::size_t>(j)] - lambda_d * 0.5 * inv_n * pair_error(i, j);
      if (head_error.size() > 0) c(i, j) += inv_n * head_error(i, j);
    }
  return c;
}

inline double alpha_objective(const SimilarityMatrix& alpha, const Matrix& coefficients) {
  return alpha.matrix().cwiseProduct(coefficients).sum();
}

struct AlphaStepResult {
  SimilarityMatrix alpha;
  double before = 0.0;
  double after = 0.0;
  std::size_t backtracks = 0;
};

/// Projected-gradient step on the linear objective sum_ij alpha_ij C_ij, row by
/// row, halving the step until the row value does not increase.
inline AlphaStepResult alpha_step(const SimilarityMatrix& alpha, const Matrix& coefficients, double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("alpha_step: lr must be > 0");
  const auto n = alpha.size();
  if (static_cast<std::size_t>(coefficients.rows()) != n || static_cast<std::size_t>(coefficients.cols()) != n)
    throw ShapeError("alpha_step: coefficient matrix shape mismatch");
  if (!coefficients.allFinite()) throw NumericalError("alpha_step: non-finite coefficients");
  AlphaStepResult out{alpha, alpha_objective(alpha, coefficients), 0.0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const Vector c = coefficients.row(static_cast<Eigen::Index>(i)).transpose();
    if (c.maxCoeff() == c.minCoeff()) continue;  // gradient orthogonal to the simplex
    const Vector a = alpha.row(i);
    const double old_value = a.dot(c);
    const Vector g = c.array() - c.mean();
    double step = lr;
    for (int attempt = 0; attempt < 60; ++attempt, step *= 0.5) {
      Vector cand = project_simplex(a - step * g);
      if (cand.dot(c) <= old_value + 1e-12) {
        out.alpha.set_row(i, cand);
        break;
      }
      ++out.backtracks;
    }
  }
  out.after = alpha_objective(out.alpha, coefficients);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

inline Matrix encode(const ModelBundle& b, const Matrix& x) { return forward(b.encoder, x).output(); }

inline Matrix classifier_logits(const ModelBundle& b, const Matrix& x) {
  return forward(b.classifier, forward(b.trunk, encode(b, x)).output()).output();
}

/// Argmax of h(e(x)), ties to the lowest class index.
inline std::vector<int> predict(const ModelBundle& b, const Matrix& x) {
  const auto logits = classifier_logits(b, x);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out[static_cast<std::size_t>(r)] = detail::argmax_row(logits, r);
  return out;
}

struct Evaluation {
  std::vector<double> domain_accuracy;
  double average = 0.0;
};

inline Evaluation evaluate(const ModelBundle& b, const MultiDomainDataset& data) {
  Evaluation out;
  for (std::size_t i = 0; i < data.n_domains(); ++i) {
    const auto pred = predict(b, data.test_features(i));
    const auto& y = data.test_labels(i);
    std::size_t hit = 0;
    for (std::size_t s = 0; s < y.size(); ++s) hit += pred[s] == y[s];
    out.domain_accuracy.push_back(y.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(y.size()));
  }
  out.average = std::accumulate(out.domain_accuracy.begin(), out.domain_accuracy.end(), 0.0) /
                static_cast<double>(out.domain_accuracy.size());
  return out;
}

/// sigmoid(f(e(x), code(domain))): how much x looks like O_domain rather than
/// its surrogate.
inline Vector outlier_scores(const ModelBundle& b, const Matrix& x, std::size_t domain) {
  const auto logit = forward(b.discriminator, discriminator_input(encode(b, x), domain, b.code, b.n_domains)).output();
  Vector s(logit.rows());
  for (Eigen::Index r = 0; r < logit.rows(); ++r) s[r] = detail::activate(Activation::sigmoid, logit(r, 0));
  return s;
}

// ---------------------------------------------------------------------------
// Empirical H-divergence

/// d = 2 (1 - [frac of O_i judged surrogate + sum_j alpha_ij frac of L_j judged
/// original]), clamped to [0, 2]. The min over f is whatever the supplied
/// discriminator achieves, so this is an estimate.
inline double h_distance_from_features(const DenseNet& disc, DomainCode code, std::size_t n_domains, std::size_t i,
                                       const Matrix& z_original, const std::vector<Matrix>& z_labeled,
                                       const Vector& alpha_row) {
  if (z_original.rows() == 0) throw InvalidArgument("estimate_h_distance: empty original sample");
  if (z_labeled.size() != static_cast<std::size_t>(alpha_row.size()))
    throw ShapeError("estimate_h_distance: alpha row length mismatch");
  bool any = false;
  for (const auto& z : z_labeled) any = any || z.rows() > 0;
  if (!any) throw InvalidArgument("estimate_h_distance: empty labeled sample");
  const auto lo = forward(disc, discriminator_input(z_original, i, code, n_domains)).output();
  double err = 0.0;
  for (Eigen::Index r = 0; r < lo.rows(); ++r) err += lo(r, 0) < 0.0;
  err /= static_cast<double>(lo.rows());
  for (std::size_t j = 0; j < z_labeled.size(); ++j) {
    if (z_labeled[j].rows() == 0) continue;
    const auto ll = forward(disc, discriminator_input(z_labeled[j], i, code, n_domains)).output();
    double e = 0.0;
    for (Eigen::Index r = 0; r < ll.rows(); ++r) e += ll(r, 0) >= 0.0;
    err += alpha_row[static_cast<Eigen::Index>(j)] * e / static_cast<double>(ll.rows());
  }
  return std::clamp(2.0 * (1.0 - err), 0.0, 2.0);
}

inline double estimate_h_distance(const ModelBundle& b, const Matrix& x_original, const std::vector<Matrix>& x_labeled,
                                  const Vector& alpha_row, std::size_t i) {
  std::vector<Matrix> zl;
  zl.reserve(x_labeled.size());
  for (const auto& x : x_labeled) zl.push_back(x.rows() ? encode(b, x) : Matrix(0, b.encoder.output_dim()));
  return h_distance_from_features(b.discriminator, b.code, b.n_domains, i, encode(b, x_original), zl, alpha_row);
}

struct DiscriminatorFit {
  std::size_t steps = 500;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Full-batch Adam on V_d over frozen features. Used for post-hoc distance
/// estimates when a model never trained its own discriminator.
inline void fit_discriminator(DenseNet& disc, DomainCode code, const Matrix& z_original, const DomainStack& original,
                              const Matrix& z_labeled, const DomainStack& labeled, const SimilarityMatrix& alpha,
                              const DiscriminatorFit& fit) {
  AdamState state(disc);
  for (std::size_t s = 0; s < fit.steps; ++s) {
    const auto term = discriminator_term(disc, code, z_original, original, z_labeled, labeled, alpha);
    if (!std::isfinite(term.value)) throw NumericalError("fit_discriminator: non-finite loss");
    adam_step(disc, term.discriminator, state, fit.lr);
  }
}

}  // namespace mudal
