#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mudal/core.hpp"
#include "mudal/csv.hpp"

namespace mudal {

/// Euclidean projection onto the probability simplex (sort-based, exact).
inline Vector project_simplex(const Vector& v) {
  const auto n = v.size();
  if (n == 0) return v;
  if (!v.allFinite()) throw InvalidArgument("project_simplex: non-finite input");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cumsum += u[static_cast<std::size_t>(k)];
    const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0) theta = t;
  }
  Vector w = (v.array() - theta).cwiseMax(0.0);
  return w;
}

/// Row-stochastic N x N matrix: row i holds the mixture weights of the
/// surrogate of original domain i over the labeled domains.
class SimilarityMatrix {
 public:
  static constexpr double kTolerance = 1e-9;

  SimilarityMatrix() = default;
  explicit SimilarityMatrix(Matrix alpha) : alpha_(std::move(alpha)) {
    if (alpha_.rows() != alpha_.cols() || alpha_.rows() == 0)
      throw ShapeError("SimilarityMatrix: must be square and non-empty");
    for (Eigen::Index i = 0; i < alpha_.rows(); ++i) check_row(alpha_.row(i).transpose(), i);
  }

  static SimilarityMatrix uniform(std::size_t n) {
    return SimilarityMatrix(Matrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n),
                                             1.0 / static_cast<double>(n)));
  }
  static SimilarityMatrix identity(std::size_t n) {
    return SimilarityMatrix(Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  }

  std::size_t size() const { return static_cast<std::size_t>(alpha_.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return alpha_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Matrix& matrix() const { return alpha_; }
  Vector row(std::size_t i) const { return alpha_.row(static_cast<Eigen::Index>(i)).transpose(); }

  void set_row(std::size_t i, const Vector& w) {
    check_row(w, static_cast<Eigen::Index>(i));
    alpha_.row(static_cast<Eigen::Index>(i)) = w.transpose();
  }

  bool valid(double tol = kTolerance) const {
    for (Eigen::Index i = 0; i < alpha_.rows(); ++i) {
      if ((alpha_.row(i).array() < 0.0).any()) return false;
      if (std::abs(alpha_.row(i).sum() - 1.0) > tol) return false;
    }
    return true;
  }

  std::string to_csv() const {
    std::string out = "surrogate";
    for (std::size_t j = 0; j < size(); ++j) out += ",labeled_" + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < size(); ++i) {
      out += std::to_string(i);
      for (std::size_t j = 0; j < size(); ++j) out += "," + csv::num((*this)(i, j));
      out += '\n';
    }
    return out;
  }

  /// Parses to_csv() output. Rows are re-validated with `tol`.
  static SimilarityMatrix from_csv(const std::string& text, double tol = 1e-6) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("alpha csv: missing header");
    const auto n = csv::split(line).size() - 1;
    Matrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw FormatError("alpha csv: expected " + std::to_string(n) + " rows");
      const auto cells = csv::split(line);
      if (cells.size() != n + 1) throw FormatError("alpha csv: row " + std::to_string(i) + " has wrong width");
      for (std::size_t j = 0; j < n; ++j)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::stod(cells[j + 1]);
    }
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if ((a.row(i).array() < 0.0).any() || std::abs(a.row(i).sum() - 1.0) > tol)
        throw FormatError("alpha csv: row " + std::to_string(i) + " is not on the simplex");
    SimilarityMatrix out;
    out.alpha_ = std::move(a);
    return out;
  }

 private:
  static void check_row(const Vector& w, Eigen::Index i) {
    if (!w.allFinite() || (w.array() < 0.0).any())
      throw InvalidArgument("SimilarityMatrix: row " + std::to_string(i) + " has negative or non-finite entries");
    if (std::abs(w.sum() - 1.0) > kTolerance)
      throw InvalidArgument("SimilarityMatrix: row " + std::to_string(i) + " sums to " + std::to_string(w.sum()));
  }

  Matrix alpha_;
};

/// alpha_j = (1/N) sum_i alpha_{i,j}.
inline Vector column_importance(const SimilarityMatrix& alpha) {
  return alpha.matrix().colwise().mean().transpose();
}

// ---------------------------------------------------------------------------
// Budget

/// Floors every entry, then hands the remaining units out by descending
/// fractional part (ties to the lower index).
inline std::vector<std::size_t> largest_remainder_round(std::span<const double> fractions, std::size_t m) {
  double total = 0.0;
  for (double f : fractions) {
    if (!std::isfinite(f) || f < 0.0) throw InvalidArgument("largest_remainder_round: fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - static_cast<double>(m)) > 1e-6 * std::max(1.0, static_cast<double>(m)))
    throw InvalidArgument("largest_remainder_round: fractions sum to " + std::to_string(total) + ", expected " +
                          std::to_string(m));
  std::vector<std::size_t> out(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < fractions.size(); ++j) {
    out[j] = static_cast<std::size_t>(std::floor(fractions[j]));
    assigned += out[j];
  }
  if (assigned > m) throw InvalidArgument("largest_remainder_round: floors exceed total");
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fractions[a] - std::floor(fractions[a]) > fractions[b] - std::floor(fractions[b]);
  });
  for (std::size_t k = 0; assigned < m; ++k, ++assigned) out[order[k % order.size()]] += 1;
  return out;
}

/// Per-round, per-domain label counts. beta_j^(r) is domain j's share of all
/// labels revealed through round r.
class BudgetLedger {
 public:
  BudgetLedger() = default;
  BudgetLedger(std::size_t m0, std::size_t m, std::vector<std::size_t> initial)
      : m0_(m0), m_(m), initial_(std::move(initial)), labeled_(initial_) {
    if (std::accumulate(initial_.begin(), initial_.end(), std::size_t{0}) != m0_)
      throw InvalidArgument("BudgetLedger: initial counts do not sum to m0");
  }

  std::size_t m0() const { return m0_; }
  std::size_t m() const { return m_; }
  std::size_t n_domains() const { return initial_.size(); }
  std::size_t rounds() const { return increments_.size(); }
  bool truncated() const { return truncated_; }

  const std::vector<std::size_t>& increments(std::size_t round) const { return increments_.at(round - 1); }
  const std::vector<std::size_t>& labeled() const { return labeled_; }
  std::size_t labeled(std::size_t j) const { return labeled_.at(j); }
  std::size_t total_labeled() const { return std::accumulate(labeled_.begin(), labeled_.end(), std::size_t{0}); }

  /// Records round rounds()+1. Short rounds are only allowed when marked truncated.
  void record(std::vector<std::size_t> inc, bool truncated = false) {
    if (inc.size() != n_domains()) throw ShapeError("BudgetLedger: increment vector has wrong length");
    const auto sum = std::accumulate(inc.begin(), inc.end(), std::size_t{0});
    if (!truncated && sum != m_)
      throw InvalidArgument("BudgetLedger: round increments sum to " + std::to_string(sum) + ", expected " +
                            std::to_string(m_));
    if (truncated && sum > m_) throw InvalidArgument("BudgetLedger: truncated round exceeds m");
    truncated_ = truncated_ || truncated;
    for (std::size_t j = 0; j < inc.size(); ++j) labeled_[j] += inc[j];
    increments_.push_back(std::move(inc));
  }

  /// Counts through round r (0 = initial).
  std::vector<std::size_t> counts(std::size_t round) const {
    if (round > rounds()) throw InvalidArgument("BudgetLedger: round not recorded");
    auto c = initial_;
    for (std::size_t r = 1; r <= round; ++r)
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += increments_[r - 1][j];
    return c;
  }

  Vector beta(std::size_t round) const {
    const auto c = counts(round);
    const double total = static_cast<double>(std::accumulate(c.begin(), c.end(), std::size_t{0}));
    Vector b(static_cast<Eigen::Index>(c.size()));
    for (std::size_t j = 0; j < c.size(); ++j) b[static_cast<Eigen::Index>(j)] = static_cast<double>(c[j]) / total;
    return b;
  }

 private:
  std::size_t m0_ = 0;
  std::size_t m_ = 0;
  std::vector<std::size_t> initial_;
  std::vector<std::size_t> labeled_;
  std::vector<std::vector<std::size_t>> increments_;
  bool truncated_ = false;
};

enum class BudgetMode {
  target_tracking,  // cumulative share tracks current alpha_j
  paper_literal,    // (alpha_j^(r) - alpha_j^(r-1)) * m, clamped
};

struct BudgetAssignment {
  std::vector<std::size_t> increments;
  bool clamped = false;  // a raw target was negative or capped by capacity
};

/// Distributes exactly m units proportionally to `weights`, never exceeding
/// per-domain capacity. Zero total weight falls back to equal shares.
inline std::vector<std::size_t> proportional_fill(std::span<const double> weights,
                                                  std::span<const std::size_t> capacity, std::size_t m) {
  const auto n = weights.size();
  if (capacity.size() != n) throw ShapeError("proportional_fill: capacity length mismatch");
  if (std::accumulate(capacity.begin(), capacity.end(), std::size_t{0}) < m)
    throw InvalidArgument("proportional_fill: capacities cannot absorb " + std::to_string(m) + " labels");
  std::vector<std::size_t> inc(n, 0);
  std::vector<char> active(n);
  for (std::size_t j = 0; j < n; ++j) active[j] = capacity[j] > 0;
  std::size_t remaining = m;
  while (remaining > 0) {
    std::vector<double> w(n, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (active[j]) total += (w[j] = std::max(weights[j], 0.0));
    if (!(total > 0.0)) {
      total = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (active[j]) total += (w[j] = 1.0);
    }
    std::vector<double> frac(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) frac[j] = static_cast<double>(remaining) * w[j] / total;
    // Renormalize exactly onto `remaining` so rounding cannot leak units.
    const double s = std::accumulate(frac.begin(), frac.end(), 0.0);
    for (auto& f : frac) f *= static_cast<double>(remaining) / s;
    const auto share = largest_remainder_round(frac, remaining);
    std::size_t given = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto add = std::min(share[j], capacity[j] - inc[j]);
      inc[j] += add;
      given += add;
      if (inc[j] == capacity[j]) active[j] = 0;
    }
    if (given == 0) throw InvalidArgument("proportional_fill: no progress distributing budget");
    remaining -= given;
  }
  return inc;
}

/// Domain-level budget for query round r >= 1.
///
/// target_tracking: raw_j = alpha_j * (m0 + r m) - labeled_j.
/// paper_literal:   raw_j = (alpha_j - previous_alpha_j) * m.
/// Both clamp raw at 0, cap at capacity and round so the sum is exactly m.
inline BudgetAssignment assign_budget(const Vector& alpha_cols, const BudgetLedger& ledger, std::size_t round,
                                      std::span<const std::size_t> capacity,
                                      BudgetMode mode = BudgetMode::target_tracking,
                                      const std::optional<Vector>& previous_alpha_cols = std::nullopt) {
  const auto n = ledger.n_domains();
  if (round < 1) throw InvalidArgument("assign_budget: round must be >= 1");
  if (static_cast<std::size_t>(alpha_cols.size()) != n || capacity.size() != n)
    throw ShapeError("assign_budget: alpha/capacity length does not match ledger");
  std::vector<double> raw(n);
  if (mode == BudgetMode::target_tracking) {
    const double total = static_cast<double>(ledger.m0() + round * ledger.m());
    for (std::size_t j = 0; j < n; ++j)
      raw[j] = alpha_cols[static_cast<Eigen::Index>(j)] * total - static_cast<double>(ledger.labeled(j));
  } else {
    if (!previous_alpha_cols || previous_alpha_cols->size() != alpha_cols.size())
      throw InvalidArgument("assign_budget: paper_literal mode needs the previous round's alpha");
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      raw[j] = (alpha_cols[jj] - (*previous_alpha_cols)[jj]) * static_cast<double>(ledger.m());
    }
  }
  BudgetAssignment out;
  for (std::size_t j = 0; j < n; ++j) {
    if (raw[j] < 0.0) {
      raw[j] = 0.0;
      out.clamped = true;
    }
    if (raw[j] > static_cast<double>(capacity[j])) {
      raw[j] = static_cast<double>(capacity[j]);
      out.clamped = true;
    }
  }
  out.increments = proportional_fill(raw, capacity, ledger.m());
  return out;
}

}  // namespace mudal
