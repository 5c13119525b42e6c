#include <gtest/gtest.h>

#include <set>

#include "mudal/data.hpp"

using namespace mudal;

namespace {

RotatingSpec small_spec() {
  RotatingSpec s;
  s.train_per_domain = 60;
  s.test_per_domain = 20;
  s.seed = 3;
  return s;
}

}  // namespace

TEST(GenRotating, ThirdDomainAngles) {
  const auto data = gen_rotating(small_spec());
  for (double a : data.train_angles(2)) {
    EXPECT_GE(a, 60.0);
    EXPECT_LT(a, 90.0);
  }
  const auto [lo, hi] = domain_angle_range(small_spec(), 2);
  EXPECT_DOUBLE_EQ(lo, 60.0);
  EXPECT_DOUBLE_EQ(hi, 90.0);
}

TEST(GenRotating, SubRangesPartitionTheRange) {
  auto s = small_spec();
  s.angle_range_deg = 270.0;
  s.n_domains = 5;
  double prev_hi = 0.0;
  for (std::size_t i = 0; i < s.n_domains; ++i) {
    const auto [lo, hi] = domain_angle_range(s, i);
    EXPECT_DOUBLE_EQ(lo, prev_hi);
    EXPECT_NEAR(hi - lo, 54.0, 1e-12);
    prev_hi = hi;
  }
  EXPECT_NEAR(prev_hi, 270.0, 1e-12);
}

TEST(GenRotating, SingleDomain) {
  auto s = small_spec();
  s.n_domains = 1;
  s.angle_range_deg = 10.0;
  const auto data = gen_rotating(s);
  EXPECT_EQ(data.n_domains(), 1u);
  for (double a : data.train_angles(0)) EXPECT_LT(a, 10.0);
}

TEST(GenRotating, Deterministic) {
  EXPECT_TRUE(gen_rotating(small_spec()) == gen_rotating(small_spec()));
  auto other = small_spec();
  other.seed = 4;
  EXPECT_FALSE(gen_rotating(small_spec()) == gen_rotating(other));
}

TEST(GenRotating, BalancedLabels) {
  auto s = small_spec();
  s.train_per_domain = 61;
  s.n_classes = 4;
  const auto data = gen_rotating(s);
  LabeledPool pool(data);
  for (std::size_t i = 0; i < data.n_domains(); ++i) {
    std::vector<std::size_t> all(data.train_size(i));
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    pool.reveal(i, all);
    std::vector<int> count(4, 0);
    for (int y : pool.labels(i)) ++count[static_cast<std::size_t>(y)];
    EXPECT_LE(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()), 1);
  }
}

TEST(GenRotating, RotationPreservesLabels) {
  // Undo the recorded rotation: the point must sit nearest its own class prototype.
  auto s = small_spec();
  s.noise = 0.05;
  s.dim = 4;
  s.n_classes = 6;
  const auto data = gen_rotating(s);
  LabeledPool pool(data);
  for (std::size_t i = 0; i < data.n_domains(); ++i) {
    std::vector<std::size_t> all(data.train_size(i));
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    pool.reveal(i, all);
    const auto y = pool.labels(i);
    for (std::size_t k = 0; k < all.size(); ++k) {
      Vector x = data.train_features(i).row(static_cast<Eigen::Index>(k)).transpose();
      detail::rotate_planes(x, -data.train_angles(i)[k]);
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t c = 0; c < s.n_classes; ++c) {
        const double d = (x - detail::blob_prototype(c, s.n_classes, s.dim)).norm();
        if (d < best_d) best_d = d, best = c;
      }
      EXPECT_EQ(static_cast<int>(best), y[k]);
    }
  }
}

TEST(GenRotating, PlaneAnglesIdentifyClassUnderAnyRotation) {
  const std::size_t c_count = 8;
  for (std::size_t a = 0; a < c_count; ++a)
    for (std::size_t b = a + 1; b < c_count; ++b) {
      // Rotation-invariant signature: angle of plane 1 minus angle of plane 0.
      auto sig = [&](std::size_t c) {
        const Vector p = detail::blob_prototype(c, c_count, 4);
        return std::remainder(std::atan2(p[3], p[2]) - std::atan2(p[1], p[0]), 2 * std::numbers::pi);
      };
      EXPECT_GT(std::abs(std::remainder(sig(a) - sig(b), 2 * std::numbers::pi)), 0.1) << a << " vs " << b;
    }
}

TEST(GenRotating, Rejections) {
  auto s = small_spec();
  s.n_classes = 40;
  s.noise = 0.15;
  EXPECT_THROW(gen_rotating(s), InvalidArgument);
  s = small_spec();
  s.dim = 3;
  EXPECT_THROW(gen_rotating(s), InvalidArgument);
  s = small_spec();
  s.shape = BaseShape::two_moons_k;
  s.n_classes = 7;
  EXPECT_THROW(gen_rotating(s), InvalidArgument);
}

TEST(GenRotating, MoonsShape) {
  auto s = small_spec();
  s.shape = BaseShape::two_moons_k;
  s.n_classes = 3;
  const auto data = gen_rotating(s);
  EXPECT_EQ(data.feature_dim(), 2u);
  EXPECT_EQ(data.n_classes(), 3u);
}

TEST(InitPool, BalancedQuota) {
  auto s = small_spec();
  const auto data = gen_rotating(s);
  const auto pool = init_pool(data, 150, 1);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(pool.labeled_count(j), 25u);
  const auto one = init_pool(data, 6, 1);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(one.labeled_count(j), 1u);
}

TEST(InitPool, RemainderToLowIndices) {
  const auto data = gen_rotating(small_spec());
  const auto pool = init_pool(data, 14, 1);
  const std::vector<std::size_t> expect{3, 3, 2, 2, 2, 2};
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(pool.labeled_count(j), expect[j]);
}

TEST(InitPool, SeedsDiffer) {
  const auto data = gen_rotating(small_spec());
  const auto a = init_pool(data, 30, 1);
  const auto b = init_pool(data, 30, 2);
  bool differ = false;
  for (std::size_t j = 0; j < 6; ++j) differ = differ || a.labeled(j) != b.labeled(j);
  EXPECT_TRUE(differ);
  const auto c = init_pool(data, 30, 1);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(a.labeled(j), c.labeled(j));
}

TEST(InitPool, BudgetExceedsPool) {
  const auto data = gen_rotating(small_spec());
  EXPECT_THROW(init_pool(data, 61 * 6, 1), InvalidArgument);
}

TEST(Reveal, EmptyAndCounts) {
  const auto data = gen_rotating(small_spec());
  LabeledPool pool = init_pool(data, 12, 5);
  const auto before = pool.labeled(2);
  pool.reveal(2, std::vector<std::size_t>{});
  EXPECT_EQ(pool.labeled(2), before);

  const auto un = pool.unlabeled(2);
  const std::vector<std::size_t> pick{un[0], un[3], un[7]};
  pool.reveal(2, pick);
  EXPECT_EQ(pool.labeled_count(2), before.size() + 3);
  const auto after = pool.unlabeled(2);
  for (auto s : pick) {
    EXPECT_EQ(std::count(after.begin(), after.end(), s), 0);
    EXPECT_EQ(pool.label(2, s), data.annotate(2, s));
  }
  EXPECT_EQ(pool.labeled_count(2) + pool.unlabeled_count(2), data.train_size(2));
  EXPECT_TRUE(std::is_sorted(pool.labeled(2).begin(), pool.labeled(2).end()));
}

TEST(Reveal, DoubleLabelingRejectedAtomically) {
  const auto data = gen_rotating(small_spec());
  LabeledPool pool = init_pool(data, 6, 5);
  const auto already = pool.labeled(0)[0];
  const auto fresh = pool.unlabeled(0)[0];
  EXPECT_THROW(pool.reveal(0, std::vector<std::size_t>{fresh, already}), InvalidArgument);
  EXPECT_FALSE(pool.is_labeled(0, fresh));
  EXPECT_THROW(pool.reveal(0, std::vector<std::size_t>{fresh, fresh}), InvalidArgument);
  EXPECT_THROW(pool.reveal(0, std::vector<std::size_t>{1000}), InvalidArgument);
  EXPECT_THROW(pool.label(0, fresh), InvalidArgument);
}

TEST(Dataset, TrainAndTestDisjointDraws) {
  // Independent RNG streams per split: the test split is not a copy of train.
  const auto data = gen_rotating(small_spec());
  for (std::size_t i = 0; i < data.n_domains(); ++i)
    EXPECT_NE(data.train_features(i).topRows(20), data.test_features(i));
}
