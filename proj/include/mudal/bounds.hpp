#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mudal/csv.hpp"
#include "mudal/objective.hpp"

namespace mudal {

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::cal: return "cal";
    case Variant::cal_alpha: return "cal_alpha";
    case Variant::cal_fa: return "cal_fa";
    case Variant::vanilla: return "vanilla";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "cal") return Variant::cal;
  if (s == "cal_alpha") return Variant::cal_alpha;
  if (s == "cal_fa") return Variant::cal_fa;
  if (s == "vanilla") return Variant::vanilla;
  throw ConfigError("unknown variant '" + s + "' (cal | cal_alpha | cal_fa | vanilla)");
}

/// d is a stand-in for the VC dimension; bounds are only compared across
/// runs that share it, never read as certificates.
struct BoundParams {
  double d = 1.0;
  double delta = 0.05;
  std::size_t total_labeled = 1;

  void validate() const {
    if (!(d > 0.0)) throw InvalidArgument("BoundParams: d must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("BoundParams: delta must be in (0, 1)");
    if (total_labeled < 1) throw InvalidArgument("BoundParams: total labeled count must be >= 1");
  }
};

/// sum_j alpha_j^2 / beta_j; zero-weight columns contribute nothing.
inline double budget_ratio(const Vector& alpha_cols, const Vector& beta) {
  if (alpha_cols.size() != beta.size()) throw ShapeError("budget_ratio: length mismatch");
  double s = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (alpha_cols[j] == 0.0) continue;
    if (!(beta[j] > 0.0))
      throw InvalidArgument("hoeffding_term: beta_" + std::to_string(j) + " is 0 while alpha_" + std::to_string(j) +
                            " > 0");
    s += alpha_cols[j] * alpha_cols[j] / beta[j];
  }
  return s;
}

/// 2 sqrt( (sum_j alpha_j^2/beta_j) (2d log(2(M+1)) + log(4/delta)) / M ).
inline double hoeffding_term(const Vector& alpha_cols, const Vector& beta, const BoundParams& p) {
  p.validate();
  const double m = static_cast<double>(p.total_labeled);
  const double complexity = 2.0 * p.d * std::log(2.0 * (m + 1.0)) + std::log(4.0 / p.delta);
  return 2.0 * std::sqrt(budget_ratio(alpha_cols, beta) * complexity / m);
}

struct BetaCheck {
  Vector beta_star;
  double gap = 0.0;             // ||beta* - alpha||_inf
  double min_value = 0.0;       // ratio at beta*
  double value_at_alpha = 0.0;  // ratio at beta = alpha
  std::size_t evaluated = 0;
};

namespace detail {

inline double ratio_or_inf(const Vector& alpha, const Vector& beta) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (alpha[j] == 0.0) continue;
    if (beta[j] <= 0.0) return std::numeric_limits<double>::infinity();
    s += alpha[j] * alpha[j] / beta[j];
  }
  return s;
}

}  // namespace detail

/// Minimizes sum_j alpha_j^2/beta_j over beta on the simplex. N <= 4 scans the
/// grid of spacing grid_step exhaustively; larger N runs projected gradient
/// descent from random starts and reports the best point found.
inline BetaCheck verify_optimal_beta(const Vector& alpha, double grid_step, std::uint64_t seed = 0) {
  const auto n = alpha.size();
  if (n < 1) throw InvalidArgument("verify_optimal_beta: empty alpha");
  if (std::abs(alpha.sum() - 1.0) > 1e-9 || alpha.minCoeff() < 0.0)
    throw InvalidArgument("verify_optimal_beta: alpha is not on the simplex");
  BetaCheck out;
  out.value_at_alpha = detail::ratio_or_inf(alpha, alpha);
  out.min_value = std::numeric_limits<double>::infinity();

  if (n <= 4) {
    if (!(grid_step > 0.0)) throw InvalidArgument("verify_optimal_beta: grid step must be > 0");
    const double kf = 1.0 / grid_step;
    const auto k = static_cast<long>(std::llround(kf));
    if (std::abs(kf - static_cast<double>(k)) > 1e-9 || k < n)
      throw InvalidArgument("verify_optimal_beta: grid step must divide 1 and leave an interior point");
    std::vector<long> parts(static_cast<std::size_t>(n), 0);
    Vector beta(n);
    // Enumerate compositions of k into n nonnegative parts.
    auto visit = [&](auto&& self, Eigen::Index j, long left) -> void {
      if (j == n - 1) {
        parts[static_cast<std::size_t>(j)] = left;
        for (Eigen::Index t = 0; t < n; ++t) beta[t] = static_cast<double>(parts[static_cast<std::size_t>(t)]) / static_cast<double>(k);
        ++out.evaluated;
        const double v = detail::ratio_or_inf(alpha, beta);
        if (v < out.min_value) {
          out.min_value = v;
          out.beta_star = beta;
        }
        return;
      }
      for (long p = 0; p <= left; ++p) {
        parts[static_cast<std::size_t>(j)] = p;
        self(self, j + 1, left - p);
      }
    };
    visit(visit, 0, k);
  } else {
    Rng rng = make_rng(seed, 601);
    for (int restart = 0; restart < 8; ++restart) {
      Vector beta(n);
      for (Eigen::Index j = 0; j < n; ++j) beta[j] = 0.05 + uniform01(rng);
      beta /= beta.sum();
      double step = 0.05;
      double value = detail::ratio_or_inf(alpha, beta);
      for (int it = 0; it < 20000 && step > 1e-15; ++it) {
        Vector g(n);
        for (Eigen::Index j = 0; j < n; ++j) g[j] = -alpha[j] * alpha[j] / (beta[j] * beta[j]);
        const Vector cand = project_simplex(beta - step * g);
        const double v = detail::ratio_or_inf(alpha, cand);
        if (v < value) {
          beta = cand;
          value = v;
          step *= 1.2;
        } else {
          step *= 0.5;
        }
      }
      ++out.evaluated;
      if (value < out.min_value) {
        out.min_value = value;
        out.beta_star = beta;
      }
    }
  }
  out.gap = (out.beta_star - alpha).cwiseAbs().maxCoeff();
  return out;
}

struct BoundReport {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  double weighted_err = 0.0;
  double hoeffding = 0.0;
  double mean_hdist = 0.0;     // (1/2N) sum_i d_i
  double vlambda_proxy = 0.0;  // trainable stand-in for (1/N) sum_i lambda_i
  double total = 0.0;
};

/// Empirical bound on the average error over all domains, evaluated on the
/// full labeled pool. The discriminator must already be trained.
///
/// The lambda_i proxy is the 0/1 surrogate error of the better of h_i and h
/// on row i; either is a witness for the inner min.
inline BoundReport empirical_bound(const ModelBundle& b, const MultiDomainDataset& data, const LabeledPool& pool,
                                   const SimilarityMatrix& alpha, BoundParams params) {
  const auto n = data.n_domains();
  if (!b.discriminator_trained) throw InvalidArgument("empirical_bound: discriminator not trained");
  if (alpha.size() != n || pool.n_domains() != n) throw ShapeError("empirical_bound: domain count mismatch");
  params.total_labeled = pool.total_labeled();
  const Vector cols = column_importance(alpha);

  std::vector<Matrix> xl;
  for (std::size_t j = 0; j < n; ++j) xl.push_back(data.train_rows(j, pool.labeled(j)));
  Vector h_err = Vector::Zero(static_cast<Eigen::Index>(n));
  Matrix head_err = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Vector beta(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    beta[jj] = static_cast<double>(pool.labeled_count(j)) / static_cast<double>(params.total_labeled);
    if (xl[j].rows() == 0) continue;
    const auto y = pool.labels(j);
    const Matrix hidden = forward(b.trunk, encode(b, xl[j])).output();
    const auto logits = forward(b.classifier, hidden).output();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) h_err[jj] += detail::argmax_row(logits, r) != y[static_cast<std::size_t>(r)];
    h_err[jj] /= static_cast<double>(y.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto hl = forward(b.heads[i], hidden).output();
      double e = 0.0;
      for (Eigen::Index r = 0; r < hl.rows(); ++r) e += detail::argmax_row(hl, r) != y[static_cast<std::size_t>(r)];
      head_err(static_cast<Eigen::Index>(i), jj) = e / static_cast<double>(y.size());
    }
  }

  BoundReport rep;
  rep.weighted_err = cols.dot(h_err);
  rep.hoeffding = hoeffding_term(cols, beta, params);
  double hd = 0.0, lam = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector row = alpha.row(i);
    hd += estimate_h_distance(b, data.train_features(i), xl, row, i);
    lam += std::min(row.dot(head_err.row(static_cast<Eigen::Index>(i)).transpose()), row.dot(h_err));
  }
  rep.mean_hdist = hd / (2.0 * static_cast<double>(n));
  rep.vlambda_proxy = lam / static_cast<double>(n);
  rep.total = rep.weighted_err + rep.hoeffding + rep.mean_hdist + rep.vlambda_proxy;
  return rep;
}

inline std::string bounds_csv_header() {
  return "variant,seed,round,weighted_err,hoeffding,mean_hdist,vlambda_proxy,total\n";
}

inline std::string bounds_csv_row(const BoundReport& r) {
  return csv::join({r.variant, std::to_string(r.seed), std::to_string(r.round), csv::num(r.weighted_err),
                    csv::num(r.hoeffding), csv::num(r.mean_hdist), csv::num(r.vlambda_proxy), csv::num(r.total)}) +
         "\n";
}

/// Mean of each bound component per variant, in the order given. A trend
/// table only: per-run orderings are not expected to hold.
inline std::string bound_ordering_diag(const std::vector<std::pair<std::string, std::vector<BoundReport>>>& reports) {
  if (reports.empty()) throw InvalidArgument("bound_ordering_diag: no reports");
  std::string out = "variant,runs,weighted_err,hoeffding,mean_hdist,vlambda_proxy,total\n";
  for (const auto& [name, list] : reports) {
    if (list.empty()) throw InvalidArgument("bound_ordering_diag: no reports for " + name);
    BoundReport m;
    for (const auto& r : list) {
      m.weighted_err += r.weighted_err;
      m.hoeffding += r.hoeffding;
      m.mean_hdist += r.mean_hdist;
      m.vlambda_proxy += r.vlambda_proxy;
      m.total += r.total;
    }
    const double k = static_cast<double>(list.size());
    out += csv::join({name, std::to_string(list.size()), csv::num(m.weighted_err / k), csv::num(m.hoeffding / k),
                      csv::num(m.mean_hdist / k), csv::num(m.vlambda_proxy / k), csv::num(m.total / k)}) +
           "\n";
  }
  return out;
}

}  // namespace mudal
