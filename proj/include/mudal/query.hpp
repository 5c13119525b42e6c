#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "mudal/objective.hpp"

namespace mudal {

struct SampleRef {
  std::size_t domain = 0;
  std::size_t index = 0;
  auto operator<=>(const SampleRef&) const = default;
};

/// A query over unlabeled candidates. Candidates may span several domains
/// (joint assignment). Strategies never touch the pool.
struct QueryRequest {
  const MultiDomainDataset* data = nullptr;
  const ModelBundle* bundle = nullptr;
  std::vector<SampleRef> candidates;
  std::size_t k = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!data) throw InvalidArgument("QueryRequest: no dataset");
    if (k > candidates.size())
      throw InvalidArgument("QueryRequest: k=" + std::to_string(k) + " exceeds " + std::to_string(candidates.size()) +
                            " candidates");
  }
};

/// Unlabeled samples of domain j as candidates.
inline std::vector<SampleRef> unlabeled_refs(const LabeledPool& pool, std::size_t j) {
  std::vector<SampleRef> out;
  for (auto s : pool.unlabeled(j)) out.push_back({j, s});
  return out;
}

inline Matrix gather_features(const MultiDomainDataset& data, const std::vector<SampleRef>& refs) {
  Matrix x(static_cast<Eigen::Index>(refs.size()), static_cast<Eigen::Index>(data.feature_dim()));
  for (std::size_t r = 0; r < refs.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) = data.train_features(refs[r].domain).row(static_cast<Eigen::Index>(refs[r].index));
  return x;
}

inline std::vector<SampleRef> select_random(const QueryRequest& req) {
  req.validate();
  Rng rng = make_rng(req.seed, 301);
  auto pool = req.candidates;
  for (std::size_t s = 0; s < req.k; ++s)
    std::swap(pool[s], pool[s + static_cast<std::size_t>(uniform_index(rng, pool.size() - s))]);
  pool.resize(req.k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// p1 - p2 of each row's softmax.
inline Vector margins(const Matrix& logits) {
  const auto p = detail::softmax_rows(logits, 1.0);
  Vector m(p.rows());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double a = -1.0, b = -1.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double v = p(r, c);
      if (v > a) {
        b = a;
        a = v;
      } else if (v > b) {
        b = v;
      }
    }
    m[r] = a - b;
  }
  return m;
}

/// k smallest margins, ties by candidate order.
inline std::vector<SampleRef> select_margin(const QueryRequest& req) {
  req.validate();
  if (!req.bundle) throw InvalidArgument("select_margin: no model");
  if (req.k == 0) return {};
  const auto m = margins(classifier_logits(*req.bundle, gather_features(*req.data, req.candidates)));
  std::vector<std::size_t> order(req.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&m](auto a, auto b) {
    return m[static_cast<Eigen::Index>(a)] < m[static_cast<Eigen::Index>(b)];
  });
  std::vector<SampleRef> out;
  for (std::size_t s = 0; s < req.k; ++s) out.push_back(req.candidates[order[s]]);
  return out;
}

/// Gradient of CE(h(z)/T, y_hat) with respect to h's final-layer weights,
/// flattened row-major (class-major): (p - e_yhat) z^T / T, p the tempered
/// softmax, z the final layer's input.
inline Matrix badge_embeddings(const ModelBundle& b, const Matrix& x, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw InvalidArgument("badge_embeddings: temperature must be > 0");
  const Matrix z = forward(b.trunk, encode(b, x)).output();
  const auto logits = forward(b.classifier, z).output();
  const auto p = detail::softmax_rows(logits, temperature);
  const auto c = p.cols(), h = z.cols();
  Matrix out(x.rows(), c * h);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int yhat = detail::argmax_row(p, r);
    for (Eigen::Index k = 0; k < c; ++k) {
      const double g = (p(r, k) - (k == yhat ? 1.0 : 0.0)) / temperature;
      out.block(r, k * h, 1, h) = g * z.row(r);
    }
  }
  return out;
}

/// k-means++ seeding over the rows of `vectors`; the seeds are the batch.
/// Returns row positions in selection order.
inline std::vector<std::size_t> kmeanspp_select(const Matrix& vectors, std::size_t k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (k > n) throw InvalidArgument("kmeanspp_select: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  std::vector<std::size_t> chosen;
  if (k == 0) return chosen;
  Rng rng = make_rng(seed, 401);
  std::vector<char> taken(n, 0);
  std::vector<double> d2(n, 0.0);
  auto take = [&](std::size_t s) {
    chosen.push_back(s);
    taken[s] = 1;
    for (std::size_t t = 0; t < n; ++t) {
      const double d = (vectors.row(static_cast<Eigen::Index>(t)) - vectors.row(static_cast<Eigen::Index>(s))).squaredNorm();
      d2[t] = chosen.size() == 1 ? d : std::min(d2[t], d);
    }
    d2[s] = 0.0;
  };
  take(static_cast<std::size_t>(uniform_index(rng, n)));
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t t = 0; t < n; ++t)
      if (!taken[t]) total += d2[t];
    if (!(total > 0.0)) {
      // Every remaining point coincides with a seed: fall back to uniform.
      std::vector<std::size_t> rest;
      for (std::size_t t = 0; t < n; ++t)
        if (!taken[t]) rest.push_back(t);
      take(rest[static_cast<std::size_t>(uniform_index(rng, rest.size()))]);
      continue;
    }
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = n, last = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (taken[t] || d2[t] <= 0.0) continue;
      last = t;
      acc += d2[t];
      if (acc > target) {
        pick = t;
        break;
      }
    }
    take(pick < n ? pick : last);
  }
  return chosen;
}

inline std::vector<SampleRef> select_badge(const QueryRequest& req, double temperature = 1.0) {
  req.validate();
  if (!req.bundle) throw InvalidArgument("select_badge: no model");
  const auto emb = badge_embeddings(*req.bundle, gather_features(*req.data, req.candidates), temperature);
  std::vector<SampleRef> out;
  for (auto s : kmeanspp_select(emb, req.k, req.seed)) out.push_back(req.candidates[s]);
  return out;
}

/// BADGE embeddings at temperature T, each scaled by sigmoid(f(e(x), code(i)))
/// of the sample's own domain, then k-means++.
inline std::vector<SampleRef> select_grads(const QueryRequest& req, double temperature = 0.5) {
  req.validate();
  if (!req.bundle) throw InvalidArgument("select_grads: no model");
  if (!req.bundle->discriminator_trained)
    throw InvalidArgument("select_grads: model has no trained discriminator (GraDS needs a CAL-family variant)");
  const auto x = gather_features(*req.data, req.candidates);
  Matrix emb = badge_embeddings(*req.bundle, x, temperature);
  for (std::size_t d = 0; d < req.bundle->n_domains; ++d) {
    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < req.candidates.size(); ++r)
      if (req.candidates[r].domain == d) rows.push_back(static_cast<Eigen::Index>(r));
    if (rows.empty()) continue;
    Matrix xd(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) xd.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
    const auto score = outlier_scores(*req.bundle, xd, d);
    for (std::size_t r = 0; r < rows.size(); ++r) emb.row(rows[r]) *= score[static_cast<Eigen::Index>(r)];
  }
  std::vector<SampleRef> out;
  for (auto s : kmeanspp_select(emb, req.k, req.seed)) out.push_back(req.candidates[s]);
  return out;
}

enum class Strategy { random, margin, badge, grads };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "margin") return Strategy::margin;
  if (s == "badge") return Strategy::badge;
  if (s == "grads") return Strategy::grads;
  throw ConfigError("unknown strategy '" + s + "' (random | margin | badge | grads)");
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::margin: return "margin";
    case Strategy::badge: return "badge";
    case Strategy::grads: return "grads";
  }
  return "?";
}

inline std::vector<SampleRef> select(Strategy s, const QueryRequest& req, double temperature) {
  switch (s) {
    case Strategy::random: return select_random(req);
    case Strategy::margin: return select_margin(req);
    case Strategy::badge: return select_badge(req);
    case Strategy::grads: return select_grads(req, temperature);
  }
  throw InvalidArgument("select: bad strategy");
}

}  // namespace mudal
