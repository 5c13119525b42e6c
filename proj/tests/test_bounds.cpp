#include <gtest/gtest.h>

#include <cmath>

#include "mudal/bounds.hpp"

using namespace mudal;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

BoundParams params(std::size_t m) {
  BoundParams p;
  p.d = 3.0;
  p.delta = 0.1;
  p.total_labeled = m;
  return p;
}

double scalar_hoeffding(const std::vector<double>& a, const std::vector<double>& b, double d, double delta, double m) {
  double ratio = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) ratio += a[j] * a[j] / b[j];
  return 2.0 * std::sqrt(ratio * (2.0 * d * std::log(2.0 * (m + 1.0)) + std::log(4.0 / delta)) / m);
}

}  // namespace

TEST(Hoeffding, SpotValue) {
  const Vector a = vec({0.5, 0.3, 0.2}), b = vec({0.2, 0.3, 0.5});
  EXPECT_NEAR(hoeffding_term(a, b, params(120)), scalar_hoeffding({0.5, 0.3, 0.2}, {0.2, 0.3, 0.5}, 3.0, 0.1, 120.0),
              1e-12);
}

TEST(Hoeffding, BetaEqualsAlphaGivesUnitRatio) {
  const Vector a = vec({0.1, 0.6, 0.3});
  EXPECT_NEAR(budget_ratio(a, a), 1.0, 1e-15);
  EXPECT_NEAR(budget_ratio(vec({0.25, 0.25, 0.25, 0.25}), vec({0.25, 0.25, 0.25, 0.25})), 1.0, 1e-15);
}

TEST(Hoeffding, MismatchedBudgetCostsMore) {
  EXPECT_NEAR(budget_ratio(vec({0.8, 0.2}), vec({0.5, 0.5})), 1.36, 1e-12);
  const auto p = params(50);
  EXPECT_NEAR(hoeffding_term(vec({0.8, 0.2}), vec({0.5, 0.5}), p) / hoeffding_term(vec({0.8, 0.2}), vec({0.8, 0.2}), p),
              std::sqrt(1.36), 1e-12);
}

TEST(Hoeffding, ZeroBetaRejectedUnlessAlphaZero) {
  EXPECT_THROW(hoeffding_term(vec({0.5, 0.5}), vec({1.0, 0.0}), params(10)), InvalidArgument);
  EXPECT_NEAR(budget_ratio(vec({1.0, 0.0}), vec({1.0, 0.0})), 1.0, 1e-15);
  BoundParams bad = params(10);
  bad.delta = 1.0;
  EXPECT_THROW(hoeffding_term(vec({1.0}), vec({1.0}), bad), InvalidArgument);
}

TEST(Hoeffding, PermutationSymmetric) {
  const auto p = params(77);
  EXPECT_NEAR(hoeffding_term(vec({0.1, 0.2, 0.7}), vec({0.3, 0.3, 0.4}), p),
              hoeffding_term(vec({0.7, 0.1, 0.2}), vec({0.4, 0.3, 0.3}), p), 1e-15);
}

TEST(OptimalBeta, MinimizerIsAlpha) {
  for (const Vector& a : {vec({0.7, 0.3}), vec({0.2, 0.5, 0.3}), vec({0.1, 0.2, 0.3, 0.4})}) {
    const auto r = verify_optimal_beta(a, 0.01);
    EXPECT_LE(r.gap, 0.01 + 1e-12);
    EXPECT_NEAR(r.value_at_alpha, 1.0, 1e-12);
    EXPECT_GE(r.min_value, 1.0 - 1e-12);
  }
}

TEST(OptimalBeta, VertexLimit) {
  const auto r = verify_optimal_beta(vec({1.0, 0.0}), 0.1);
  EXPECT_NEAR(r.beta_star[0], 1.0, 1e-15);
  EXPECT_NEAR(r.min_value, 1.0, 1e-15);
}

TEST(OptimalBeta, RejectsBadInputs) {
  EXPECT_THROW(verify_optimal_beta(vec({0.5, 0.5}), 0.3), InvalidArgument);
  EXPECT_THROW(verify_optimal_beta(vec({0.25, 0.25, 0.25}), 0.01), InvalidArgument);
}

TEST(OptimalBeta, DescentPathForLargeN) {
  const Vector a = vec({0.3, 0.3, 0.2, 0.1, 0.06, 0.04});
  const auto r = verify_optimal_beta(a, 0.0, 5);
  EXPECT_LT(r.gap, 1e-4);
  EXPECT_NEAR(r.min_value, 1.0, 1e-8);
}

TEST(EmpiricalBound, ComponentsAndConstantClassifier) {
  RotatingSpec s;
  s.n_domains = 3;
  s.train_per_domain = 40;
  s.test_per_domain = 8;
  const auto data = gen_rotating(s);
  LabeledPool pool(data);
  for (std::size_t j = 0; j < 3; ++j) pool.reveal(j, pool.unlabeled(j));
  Architecture a;
  a.input_dim = 2;
  a.n_classes = 4;
  a.n_domains = 3;
  a.feature_dim = 4;
  a.encoder_hidden = {6};
  a.classifier_hidden = {6};
  a.discriminator_hidden = {6};
  auto b = ModelBundle::create(a, 2);
  EXPECT_THROW(empirical_bound(b, data, pool, SimilarityMatrix::uniform(3), params(1)), InvalidArgument);
  b.discriminator_trained = true;
  auto& last = b.classifier.mutable_layer(0);
  last.weight.setZero();
  last.bias.setZero();
  for (auto& h : b.heads) h = b.classifier;
  const auto rep = empirical_bound(b, data, pool, SimilarityMatrix::uniform(3), params(1));
  EXPECT_NEAR(rep.weighted_err, 0.75, 1e-12);
  EXPECT_NEAR(rep.vlambda_proxy, 0.75, 1e-12);
  EXPECT_GE(rep.hoeffding, 0.0);
  EXPECT_GE(rep.mean_hdist, 0.0);
  EXPECT_LE(rep.mean_hdist, 1.0);
  EXPECT_NEAR(rep.total, rep.weighted_err + rep.hoeffding + rep.mean_hdist + rep.vlambda_proxy, 1e-12);
  // Equal budgets and uniform alpha: ratio 1.
  EXPECT_NEAR(rep.hoeffding, hoeffding_term(vec({1. / 3, 1. / 3, 1. / 3}), vec({1. / 3, 1. / 3, 1. / 3}), params(120)),
              1e-12);
}

TEST(BoundDiag, MeansPerVariant) {
  BoundReport a, b;
  a.weighted_err = 0.2;
  a.total = 1.0;
  b.weighted_err = 0.4;
  b.total = 2.0;
  const auto text = bound_ordering_diag({{"cal", {a, b}}, {"vanilla", {a}}});
  EXPECT_NE(text.find("cal,2,0.3"), std::string::npos);
  EXPECT_NE(text.find("vanilla,1,0.2"), std::string::npos);
  EXPECT_THROW(bound_ordering_diag({}), InvalidArgument);
  EXPECT_THROW(bound_ordering_diag({{"cal", {}}}), InvalidArgument);
}

TEST(BoundCsv, RowMatchesHeader) {
  BoundReport r;
  r.variant = "cal";
  const auto head = bounds_csv_header(), row = bounds_csv_row(r);
  EXPECT_EQ(std::count(head.begin(), head.end(), ','), std::count(row.begin(), row.end(), ','));
}
