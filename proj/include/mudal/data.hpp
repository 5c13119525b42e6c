#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mudal/core.hpp"

namespace mudal {

struct DomainData {
  Matrix train_x;
  std::vector<int> train_y;
  Matrix test_x;
  std::vector<int> test_y;
  // Rotation applied to each sample (degrees); empty for non-rotated data.
  std::vector<double> train_angle;
  std::vector<double> test_angle;
};

/// N domains sharing one feature space and one label space, each with
/// disjoint train and test splits. Immutable after construction.
///
/// Training labels are only meant to be read through a LabeledPool;
/// annotate() plays the role of the human oracle.
class MultiDomainDataset {
 public:
  MultiDomainDataset() = default;
  MultiDomainDataset(std::vector<DomainData> domains, std::size_t n_classes)
      : domains_(std::move(domains)), n_classes_(n_classes) {
    if (domains_.empty()) throw InvalidArgument("MultiDomainDataset: no domains");
    if (n_classes_ < 2) throw InvalidArgument("MultiDomainDataset: need at least 2 classes");
    const auto dim = domains_.front().train_x.cols();
    for (std::size_t i = 0; i < domains_.size(); ++i) {
      const auto& d = domains_[i];
      const auto tag = "MultiDomainDataset: domain " + std::to_string(i) + ": ";
      if (d.train_x.cols() != dim || d.test_x.cols() != dim) throw ShapeError(tag + "feature dimension differs");
      if (static_cast<std::size_t>(d.train_x.rows()) != d.train_y.size() ||
          static_cast<std::size_t>(d.test_x.rows()) != d.test_y.size())
        throw ShapeError(tag + "label count mismatch");
      if (d.train_y.empty()) throw InvalidArgument(tag + "empty train split");
      for (int y : d.train_y)
        if (y < 0 || static_cast<std::size_t>(y) >= n_classes_) throw InvalidArgument(tag + "label out of range");
      for (int y : d.test_y)
        if (y < 0 || static_cast<std::size_t>(y) >= n_classes_) throw InvalidArgument(tag + "label out of range");
    }
  }

  std::size_t n_domains() const { return domains_.size(); }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t feature_dim() const { return domains_.empty() ? 0 : static_cast<std::size_t>(domains_[0].train_x.cols()); }

  std::size_t train_size(std::size_t i) const { return domains_.at(i).train_y.size(); }
  std::size_t test_size(std::size_t i) const { return domains_.at(i).test_y.size(); }
  const Matrix& train_features(std::size_t i) const { return domains_.at(i).train_x; }
  const Matrix& test_features(std::size_t i) const { return domains_.at(i).test_x; }
  const std::vector<int>& test_labels(std::size_t i) const { return domains_.at(i).test_y; }
  const std::vector<double>& train_angles(std::size_t i) const { return domains_.at(i).train_angle; }
  const std::vector<double>& test_angles(std::size_t i) const { return domains_.at(i).test_angle; }

  int annotate(std::size_t i, std::size_t index) const { return domains_.at(i).train_y.at(index); }

  Matrix train_rows(std::size_t i, std::span<const std::size_t> indices) const {
    const auto& x = domains_.at(i).train_x;
    Matrix out(static_cast<Eigen::Index>(indices.size()), x.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] >= train_size(i)) throw InvalidArgument("train_rows: index out of range");
      out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(indices[r]));
    }
    return out;
  }

  bool operator==(const MultiDomainDataset& o) const {
    if (n_classes_ != o.n_classes_ || domains_.size() != o.domains_.size()) return false;
    for (std::size_t i = 0; i < domains_.size(); ++i) {
      const auto& a = domains_[i];
      const auto& b = o.domains_[i];
      if (a.train_x.rows() != b.train_x.rows() || a.train_x.cols() != b.train_x.cols() ||
          a.test_x.rows() != b.test_x.rows() || a.test_x.cols() != b.test_x.cols())
        return false;
      if (a.train_x != b.train_x || a.test_x != b.test_x || a.train_y != b.train_y || a.test_y != b.test_y ||
          a.train_angle != b.train_angle || a.test_angle != b.test_angle)
        return false;
    }
    return true;
  }

 private:
  std::vector<DomainData> domains_;
  std::size_t n_classes_ = 0;
};

// ---------------------------------------------------------------------------
// Rotating-domain generator

enum class BaseShape { gaussian_blobs, two_moons_k };

struct RotatingSpec {
  std::size_t n_domains = 6;
  std::size_t train_per_domain = 400;
  std::size_t test_per_domain = 200;
  std::size_t n_classes = 4;
  double angle_range_deg = 180.0;
  BaseShape shape = BaseShape::gaussian_blobs;
  double noise = 0.15;
  // Even. Coordinates form dim/2 planes, each rotated by the sample's angle.
  std::size_t dim = 2;
  std::uint64_t seed = 0;

  bool operator==(const RotatingSpec&) const = default;
};

/// [lo, hi) rotation range in degrees of 0-based domain i.
inline std::pair<double, double> domain_angle_range(const RotatingSpec& spec, std::size_t i) {
  const double width = spec.angle_range_deg / static_cast<double>(spec.n_domains);
  return {width * static_cast<double>(i), width * static_cast<double>(i + 1)};
}

namespace detail {

// Unrotated class prototype: in plane k, class c sits on the unit circle at
// angle 2*pi*((c*(k+1)) mod C)/C. Plane 0 is the classic ring of blobs; the
// angle between planes 0 and 1 names the class whatever the rotation.
inline Vector blob_prototype(std::size_t c, std::size_t n_classes, std::size_t dim) {
  Vector mu(static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const auto slot = (c * (k + 1)) % n_classes;
    const double a = 2.0 * std::numbers::pi * static_cast<double>(slot) / static_cast<double>(n_classes);
    mu[static_cast<Eigen::Index>(2 * k)] = std::cos(a);
    mu[static_cast<Eigen::Index>(2 * k + 1)] = std::sin(a);
  }
  return mu;
}

// Point on the c-th of C interleaved half-moons, centred on the origin.
inline Vector moon_point(std::size_t c, std::size_t n_classes, Rng& rng) {
  const double t = std::numbers::pi * uniform01(rng);
  const double shift = static_cast<double>(c) - 0.5 * static_cast<double>(n_classes - 1);
  Vector p(2);
  if (c % 2 == 0) {
    p << std::cos(t) + shift, std::sin(t) - 0.25;
  } else {
    p << -std::cos(t) + shift, -std::sin(t) + 0.25;
  }
  return p;
}

inline void rotate_planes(Eigen::Ref<Vector> x, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  for (Eigen::Index k = 0; k + 1 < x.size(); k += 2) {
    const double u = x[k], v = x[k + 1];
    x[k] = c * u - s * v;
    x[k + 1] = s * u + c * v;
  }
}

inline void fill_split(const RotatingSpec& spec, std::size_t domain, std::size_t n, Rng& rng, Matrix& x,
                       std::vector<int>& y, std::vector<double>& angle) {
  const auto [lo, hi] = domain_angle_range(spec, domain);
  x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.dim));
  y.resize(n);
  angle.resize(n);
  // Balanced labels: round-robin, then shuffled.
  for (std::size_t s = 0; s < n; ++s) y[s] = static_cast<int>(s % spec.n_classes);
  shuffle(y, rng);
  for (std::size_t s = 0; s < n; ++s) {
    const auto c = static_cast<std::size_t>(y[s]);
    Vector p;
    if (spec.shape == BaseShape::gaussian_blobs) {
      p = blob_prototype(c, spec.n_classes, spec.dim);
    } else {
      p = moon_point(c, spec.n_classes, rng);
    }
    for (Eigen::Index d = 0; d < p.size(); ++d) p[d] += spec.noise * standard_normal(rng);
    angle[s] = lo + (hi - lo) * uniform01(rng);
    rotate_planes(p, angle[s]);
    x.row(static_cast<Eigen::Index>(s)) = p.transpose();
  }
}

}  // namespace detail

/// Synthetic rotating-domain classification task. Domain i rotates base-shape
/// samples by an angle drawn uniformly from its sub-range of the total range.
inline MultiDomainDataset gen_rotating(const RotatingSpec& spec) {
  if (spec.n_domains < 1) throw InvalidArgument("gen_rotating: n_domains must be >= 1");
  if (spec.n_classes < 2) throw InvalidArgument("gen_rotating: n_classes must be >= 2");
  if (spec.train_per_domain < spec.n_classes)
    throw InvalidArgument("gen_rotating: train_per_domain must cover every class");
  if (spec.dim < 2 || spec.dim % 2 != 0) throw InvalidArgument("gen_rotating: dim must be even and >= 2");
  if (!(spec.noise >= 0.0)) throw InvalidArgument("gen_rotating: noise must be >= 0");
  if (spec.shape == BaseShape::gaussian_blobs) {
    double closest = INFINITY;
    for (std::size_t a = 0; a < spec.n_classes; ++a)
      for (std::size_t b = a + 1; b < spec.n_classes; ++b)
        closest = std::min(closest, (detail::blob_prototype(a, spec.n_classes, spec.dim) -
                                     detail::blob_prototype(b, spec.n_classes, spec.dim))
                                        .norm());
    if (closest <= 2.0 * spec.noise)
      throw InvalidArgument("gen_rotating: " + std::to_string(spec.n_classes) +
                            " blobs are not distinguishable at noise " + std::to_string(spec.noise) +
                            " (closest prototypes " + std::to_string(closest) + " apart)");
  } else {
    if (spec.dim != 2) throw InvalidArgument("gen_rotating: two_moons_k is two-dimensional");
    if (spec.n_classes > 6) throw InvalidArgument("gen_rotating: two_moons_k supports at most 6 classes");
  }
  std::vector<DomainData> domains(spec.n_domains);
  for (std::size_t i = 0; i < spec.n_domains; ++i) {
    Rng train_rng = make_rng(spec.seed, 1000 + 2 * i);
    Rng test_rng = make_rng(spec.seed, 1001 + 2 * i);
    auto& d = domains[i];
    detail::fill_split(spec, i, spec.train_per_domain, train_rng, d.train_x, d.train_y, d.train_angle);
    detail::fill_split(spec, i, spec.test_per_domain, test_rng, d.test_x, d.test_y, d.test_angle);
  }
  return MultiDomainDataset(std::move(domains), spec.n_classes);
}

// ---------------------------------------------------------------------------
// Labeled pool

/// Per-domain labeled/unlabeled bookkeeping over a dataset's train splits.
/// Labeled sets only grow. Holds a non-owning pointer to the dataset.
class LabeledPool {
 public:
  LabeledPool() = default;
  explicit LabeledPool(const MultiDomainDataset& data) : data_(&data) {
    labeled_.resize(data.n_domains());
    flags_.resize(data.n_domains());
    labels_.resize(data.n_domains());
    for (std::size_t j = 0; j < data.n_domains(); ++j) {
      flags_[j].assign(data.train_size(j), 0);
      labels_[j].assign(data.train_size(j), -1);
    }
  }

  std::size_t n_domains() const { return labeled_.size(); }
  std::size_t train_size(std::size_t j) const { return flags_.at(j).size(); }

  // Sorted ascending.
  const std::vector<std::size_t>& labeled(std::size_t j) const { return labeled_.at(j); }
  std::vector<std::size_t> unlabeled(std::size_t j) const {
    std::vector<std::size_t> out;
    out.reserve(train_size(j) - labeled_count(j));
    for (std::size_t s = 0; s < flags_.at(j).size(); ++s)
      if (!flags_[j][s]) out.push_back(s);
    return out;
  }
  std::size_t labeled_count(std::size_t j) const { return labeled_.at(j).size(); }
  std::size_t unlabeled_count(std::size_t j) const { return train_size(j) - labeled_count(j); }
  std::size_t total_labeled() const {
    std::size_t n = 0;
    for (const auto& l : labeled_) n += l.size();
    return n;
  }
  bool is_labeled(std::size_t j, std::size_t index) const { return flags_.at(j).at(index) != 0; }

  int label(std::size_t j, std::size_t index) const {
    if (!is_labeled(j, index))
      throw InvalidArgument("LabeledPool: label of unlabeled sample " + std::to_string(index) + " in domain " +
                            std::to_string(j) + " requested");
    return labels_[j][index];
  }
  std::vector<int> labels(std::size_t j) const {
    std::vector<int> out;
    out.reserve(labeled_count(j));
    for (auto s : labeled_[j]) out.push_back(labels_[j][s]);
    return out;
  }

  /// Move `indices` of domain j to the labeled set. All-or-nothing: a
  /// duplicate, out-of-range or already-labeled index rejects the request.
  void reveal(std::size_t j, std::span<const std::size_t> indices) {
    if (j >= n_domains()) throw InvalidArgument("reveal: domain out of range");
    std::vector<std::size_t> sorted(indices.begin(), indices.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      if (sorted[k] >= train_size(j))
        throw InvalidArgument("reveal: index " + std::to_string(sorted[k]) + " out of range in domain " +
                              std::to_string(j));
      if (k > 0 && sorted[k] == sorted[k - 1])
        throw InvalidArgument("reveal: index " + std::to_string(sorted[k]) + " requested twice");
      if (flags_[j][sorted[k]])
        throw InvalidArgument("reveal: index " + std::to_string(sorted[k]) + " of domain " + std::to_string(j) +
                              " is already labeled");
    }
    for (auto s : sorted) {
      flags_[j][s] = 1;
      labels_[j][s] = data_->annotate(j, s);
    }
    auto& l = labeled_[j];
    l.insert(l.end(), sorted.begin(), sorted.end());
    std::inplace_merge(l.begin(), l.end() - static_cast<std::ptrdiff_t>(sorted.size()), l.end());
  }

 private:
  const MultiDomainDataset* data_ = nullptr;
  std::vector<std::vector<std::size_t>> labeled_;
  std::vector<std::vector<char>> flags_;
  std::vector<std::vector<int>> labels_;
};

/// Per-domain share of an initial budget: m0/N each, remainder to the
/// lowest-indexed domains.
inline std::vector<std::size_t> balanced_quota(std::size_t m0, std::size_t n_domains) {
  std::vector<std::size_t> q(n_domains, m0 / n_domains);
  for (std::size_t j = 0; j < m0 % n_domains; ++j) q[j] += 1;
  return q;
}

/// Domain-balanced random initial labeled set.
inline LabeledPool init_pool(const MultiDomainDataset& data, std::size_t m0, std::uint64_t seed) {
  LabeledPool pool(data);
  const auto quota = balanced_quota(m0, data.n_domains());
  for (std::size_t j = 0; j < data.n_domains(); ++j)
    if (quota[j] > data.train_size(j))
      throw InvalidArgument("init_pool: domain " + std::to_string(j) + " needs " + std::to_string(quota[j]) +
                            " labels but has " + std::to_string(data.train_size(j)) + " train samples");
  for (std::size_t j = 0; j < data.n_domains(); ++j) {
    Rng rng = make_rng(seed, 7000 + j);
    std::vector<std::size_t> idx(data.train_size(j));
    for (std::size_t s = 0; s < idx.size(); ++s) idx[s] = s;
    // Partial Fisher-Yates: first quota[j] slots are a uniform sample.
    for (std::size_t k = 0; k < quota[j]; ++k) {
      const auto pick = k + static_cast<std::size_t>(uniform_index(rng, idx.size() - k));
      std::swap(idx[k], idx[pick]);
    }
    idx.resize(quota[j]);
    pool.reveal(j, idx);
  }
  return pool;
}

}  // namespace mudal
