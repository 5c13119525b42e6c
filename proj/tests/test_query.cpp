#include <gtest/gtest.h>

#include <set>

#include "mudal/query.hpp"

using namespace mudal;

namespace {

MultiDomainDataset data3() {
  RotatingSpec s;
  s.n_domains = 3;
  s.train_per_domain = 50;
  s.test_per_domain = 10;
  s.seed = 2;
  return gen_rotating(s);
}

ModelBundle bundle_for(const MultiDomainDataset& d, std::uint64_t seed = 3) {
  Architecture a;
  a.input_dim = d.feature_dim();
  a.n_classes = d.n_classes();
  a.n_domains = d.n_domains();
  a.feature_dim = 6;
  a.encoder_hidden = {8};
  a.classifier_hidden = {8};
  a.discriminator_hidden = {8};
  auto b = ModelBundle::create(a, seed);
  b.discriminator_trained = true;
  return b;
}

void constant_discriminator(ModelBundle& b, double logit) {
  auto& last = b.discriminator.mutable_layer(b.discriminator.num_layers() - 1);
  last.weight.setZero();
  last.bias.setConstant(logit);
}

QueryRequest request(const MultiDomainDataset& d, const LabeledPool& pool, const ModelBundle* b, std::size_t k,
                     std::uint64_t seed = 1) {
  QueryRequest r;
  r.data = &d;
  r.bundle = b;
  for (std::size_t j = 0; j < d.n_domains(); ++j) {
    const auto refs = unlabeled_refs(pool, j);
    r.candidates.insert(r.candidates.end(), refs.begin(), refs.end());
  }
  r.k = k;
  r.seed = seed;
  return r;
}

}  // namespace

TEST(Random, EdgeCasesAndDeterminism) {
  const auto d = data3();
  const auto pool = init_pool(d, 30, 1);
  auto req = request(d, pool, nullptr, 0);
  EXPECT_TRUE(select_random(req).empty());
  req.k = req.candidates.size();
  auto all = req.candidates;
  std::sort(all.begin(), all.end());
  EXPECT_EQ(select_random(req), all);
  req.k = 7;
  const auto a = select_random(req);
  EXPECT_EQ(a, select_random(req));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  req.seed = 2;
  EXPECT_NE(a, select_random(req));
  req.k = req.candidates.size() + 1;
  EXPECT_THROW(select_random(req), InvalidArgument);
}

TEST(Margin, HandValue) {
  Matrix logits(1, 3);
  logits << std::log(0.6), std::log(0.3), std::log(0.1);
  EXPECT_NEAR(margins(logits)[0], 0.3, 1e-12);
}

TEST(Margin, ShiftInvariantAndMatchesSort) {
  Rng rng = make_rng(4);
  Matrix logits(30, 4);
  for (auto& v : logits.reshaped()) v = standard_normal(rng);
  const Vector m = margins(logits);
  const Vector shifted = margins((logits.array() + 7.5).matrix());
  EXPECT_LT((m - shifted).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index r = 0; r < 30; ++r) {
    std::vector<double> p(4);
    double z = 0.0;
    for (Eigen::Index c = 0; c < 4; ++c) z += std::exp(logits(r, c));
    for (Eigen::Index c = 0; c < 4; ++c) p[static_cast<std::size_t>(c)] = std::exp(logits(r, c)) / z;
    std::sort(p.rbegin(), p.rend());
    EXPECT_NEAR(m[r], p[0] - p[1], 1e-12);
  }
}

TEST(Margin, PicksSmallestMargins) {
  const auto d = data3();
  const auto pool = init_pool(d, 30, 1);
  const auto b = bundle_for(d);
  const auto req = request(d, pool, &b, 5);
  const auto picked = select_margin(req);
  const Vector m = margins(classifier_logits(b, gather_features(d, req.candidates)));
  std::vector<double> sorted(m.data(), m.data() + m.size());
  std::sort(sorted.begin(), sorted.end());
  const Vector pm = margins(classifier_logits(b, gather_features(d, picked)));
  for (Eigen::Index s = 0; s < 5; ++s) EXPECT_LE(pm[s], sorted[4] + 1e-15);
}

TEST(Badge, EmbeddingMatchesBackwardAtPseudoLabel) {
  const auto d = data3();
  const auto b = bundle_for(d);
  const Matrix x = d.train_features(1).topRows(6);
  for (double t : {1.0, 0.5}) {
    const Matrix emb = badge_embeddings(b, x, t);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto trunk = forward(b.trunk, encode(b, x.row(r)));
      const auto head = forward(b.classifier, trunk.output());
      Eigen::Index yhat;
      head.output().row(0).maxCoeff(&yhat);
      const std::vector<int> y{static_cast<int>(yhat)};
      const std::vector<double> w{1.0};
      const auto ce = softmax_ce(head.output(), y, t, w);
      const auto g = backward(b.classifier, head, ce.grad);
      const Matrix flat = g.weight[0].reshaped<Eigen::RowMajor>().transpose();
      EXPECT_LT((emb.row(r) - flat).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Badge, NormIdentityAndTemperature) {
  const auto d = data3();
  const auto b = bundle_for(d);
  const Matrix x = d.train_features(0).topRows(10);
  const Matrix z = forward(b.trunk, encode(b, x)).output();
  const Matrix logits = forward(b.classifier, z).output();
  for (double t : {1.0, 0.5}) {
    const Matrix emb = badge_embeddings(b, x, t);
    for (Eigen::Index r = 0; r < 10; ++r) {
      Vector p = ((logits.row(r).array() - logits.row(r).maxCoeff()) / t).exp().transpose();
      p /= p.sum();
      Eigen::Index yhat;
      p.maxCoeff(&yhat);
      p[yhat] -= 1.0;
      EXPECT_NEAR(emb.row(r).norm(), p.norm() * z.row(r).norm() / t, 1e-10);
    }
  }
}

TEST(Badge, ConfidentPredictionGivesZeroEmbedding) {
  const auto d = data3();
  auto b = bundle_for(d);
  auto& last = b.classifier.mutable_layer(0);
  last.weight.setZero();
  last.bias.setZero();
  last.bias[2] = 1000.0;
  const Matrix emb = badge_embeddings(b, d.train_features(0).topRows(4));
  EXPECT_EQ(emb.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Badge, TwoClassHandComputed) {
  // One hidden unit with value 2, logits (0, ln 3): p = (1/4, 3/4), y_hat = 1.
  DenseLayer lin;
  lin.weight = Matrix::Zero(2, 1);
  lin.weight(1, 0) = std::log(3.0) / 2.0;
  lin.bias = Vector::Zero(2);
  ModelBundle b;
  DenseLayer id;
  id.weight = Matrix::Identity(1, 1);
  id.bias = Vector::Zero(1);
  b.encoder = DenseNet({id});
  b.trunk = DenseNet({id});
  b.classifier = DenseNet({lin});
  const Matrix x = Matrix::Constant(1, 1, 2.0);
  const Matrix emb = badge_embeddings(b, x);
  EXPECT_NEAR(emb(0, 0), 0.25 * 2.0, 1e-12);
  EXPECT_NEAR(emb(0, 1), -0.25 * 2.0, 1e-12);
}

TEST(KMeansPP, RejectsAndNeverRepeats) {
  Matrix pts = Matrix::Zero(10, 2);
  pts.row(3) << 5.0, 5.0;
  EXPECT_THROW(kmeanspp_select(pts, 11, 1), InvalidArgument);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto pick = kmeanspp_select(pts, 10, s);
    EXPECT_EQ(std::set<std::size_t>(pick.begin(), pick.end()).size(), 10u);
    // The lone distinct point is always among the first two seeds.
    EXPECT_TRUE(pick[0] == 3 || pick[1] == 3);
  }
  EXPECT_TRUE(kmeanspp_select(pts, 0, 1).empty());
}

TEST(KMeansPP, CoversSeparatedClusters) {
  Rng rng = make_rng(9);
  Matrix pts(50, 2);
  for (Eigen::Index r = 0; r < 50; ++r) {
    const double cx = 100.0 * static_cast<double>(r % 5);
    pts.row(r) << cx + standard_normal(rng), standard_normal(rng);
  }
  int covered = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    std::set<Eigen::Index> clusters;
    for (auto p : kmeanspp_select(pts, 5, s)) clusters.insert(static_cast<Eigen::Index>(p) % 5);
    covered += clusters.size() == 5;
  }
  EXPECT_GE(covered, 95);
}

TEST(Grads, ConstantScoreEqualsBadge) {
  const auto d = data3();
  const auto pool = init_pool(d, 30, 1);
  auto b = bundle_for(d);
  constant_discriminator(b, 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto req = request(d, pool, &b, 8, s);
    EXPECT_EQ(select_grads(req, 1.0), select_badge(req, 1.0));
  }
}

TEST(Grads, ZeroScoreFallsBackToDistinctSamples) {
  const auto d = data3();
  const auto pool = init_pool(d, 30, 1);
  auto b = bundle_for(d);
  constant_discriminator(b, -1000.0);
  const auto picked = select_grads(request(d, pool, &b, 12), 0.5);
  EXPECT_EQ(std::set<SampleRef>(picked.begin(), picked.end()).size(), 12u);
}

TEST(Grads, ZeroLogitScoresOneHalf) {
  const auto d = data3();
  auto b = bundle_for(d);
  auto& last = b.discriminator.mutable_layer(b.discriminator.num_layers() - 1);
  last.weight.setZero();
  last.bias.setZero();
  EXPECT_NEAR(outlier_scores(b, d.train_features(2).topRows(3), 2)[0], 0.5, 1e-15);
}

TEST(Grads, RequiresTrainedDiscriminator) {
  const auto d = data3();
  const auto pool = init_pool(d, 30, 1);
  auto b = bundle_for(d);
  b.discriminator_trained = false;
  EXPECT_THROW(select_grads(request(d, pool, &b, 3), 0.5), InvalidArgument);
}

TEST(Strategies, ReturnDistinctUnlabeledCandidates) {
  const auto d = data3();
  const auto pool = init_pool(d, 30, 1);
  const auto b = bundle_for(d);
  for (auto s : {Strategy::random, Strategy::margin, Strategy::badge, Strategy::grads}) {
    const auto picked = select(s, request(d, pool, &b, 20), 0.5);
    ASSERT_EQ(picked.size(), 20u) << to_string(s);
    EXPECT_EQ(std::set<SampleRef>(picked.begin(), picked.end()).size(), 20u);
    for (const auto& r : picked) EXPECT_FALSE(pool.is_labeled(r.domain, r.index));
  }
  EXPECT_EQ(parse_strategy("grads"), Strategy::grads);
  EXPECT_THROW(parse_strategy("Badge"), ConfigError);
}
