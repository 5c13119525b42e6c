#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mudal/harness.hpp"

using namespace mudal;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.dataset.rotating.n_domains = 3;
  c.dataset.rotating.train_per_domain = 30;
  c.dataset.rotating.test_per_domain = 12;
  c.m0 = 6;
  c.m = 6;
  c.rounds = 2;
  c.seeds = {1};
  c.bounds = false;
  c.train.epochs = 2;
  c.train.feature_dim = 4;
  c.train.encoder_hidden = {6};
  c.train.classifier_hidden = {6};
  c.train.discriminator_hidden = {6};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mudal_harness_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, MinimalTakesDefaults) {
  const auto c = parse_config_text("[method]\nvariant = cal\n");
  EXPECT_EQ(c, ExperimentConfig{});
  EXPECT_EQ(parse_config_text(""), ExperimentConfig{});
}

TEST(Config, UnknownKeyNamed) {
  try {
    parse_config_text("[train]\nlamda_d = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lamda_d"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("[trian]\nlr = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nlr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[method]\nvariant = vanilla\nstrategy = grads\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[method]\nmode = separate\n[budget]\nm = 61\n"), ConfigError);
}

TEST(Config, SerializeRoundTrip) {
  auto c = tiny();
  c.train.lr_alpha = 0.1 + 0.2;
  c.train.variant = Variant::cal_fa;
  c.strategy = Strategy::margin;
  c.mode = AssignMode::joint;
  c.dataset.rotating.shape = BaseShape::two_moons_k;
  c.seeds = {4, 9, 16};
  c.train.encoder_hidden = {5, 7};
  EXPECT_EQ(parse_config_text(serialize(c)), c);
}

TEST(RunSeed, ZeroRoundsTrainsOnce) {
  auto c = tiny();
  c.rounds = 0;
  const auto data = load_dataset(c.dataset);
  const auto run = run_seed(c, data, 1);
  ASSERT_EQ(run.rounds.size(), 1u);
  EXPECT_EQ(run.rounds[0].labeled, (std::vector<std::size_t>{2, 2, 2}));
}

TEST(RunSeed, JointRevealsExactlyM) {
  auto c = tiny();
  c.mode = AssignMode::joint;
  c.strategy = Strategy::random;
  c.m = 7;
  const auto run = run_seed(c, load_dataset(c.dataset), 2);
  ASSERT_EQ(run.rounds.size(), 3u);
  for (std::size_t r = 1; r < 3; ++r) {
    std::size_t inc = 0, before = 0, after = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      inc += run.rounds[r].increments[j];
      before += run.rounds[r - 1].labeled[j];
      after += run.rounds[r].labeled[j];
    }
    EXPECT_EQ(inc, 7u);
    EXPECT_EQ(after - before, 7u);
  }
}

TEST(RunSeed, SeparateSplitsEvenly) {
  auto c = tiny();
  c.mode = AssignMode::separate;
  c.strategy = Strategy::margin;
  c.train.variant = Variant::vanilla;
  const auto run = run_seed(c, load_dataset(c.dataset), 3);
  for (std::size_t r = 1; r < run.rounds.size(); ++r)
    EXPECT_EQ(run.rounds[r].increments, (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(run.rounds.back().labeled, (std::vector<std::size_t>{6, 6, 6}));
}

TEST(RunSeed, CalOptimalConservesBudget) {
  auto c = tiny();
  c.bounds = true;
  const auto run = run_seed(c, load_dataset(c.dataset), 4);
  for (std::size_t r = 1; r < run.rounds.size(); ++r) {
    std::size_t inc = 0;
    for (auto k : run.rounds[r].increments) inc += k;
    EXPECT_EQ(inc, c.m);
  }
  for (const auto& rm : run.rounds) {
    ASSERT_EQ(rm.h_distance.size(), 3u);
    ASSERT_TRUE(rm.bound.has_value());
    for (double d : rm.h_distance) {
      EXPECT_GE(d, 0.0);
      EXPECT_LE(d, 2.0);
    }
  }
}

TEST(RunSeed, TruncatesWhenPoolRunsOut) {
  auto c = tiny();
  c.mode = AssignMode::separate;
  c.strategy = Strategy::random;
  c.train.variant = Variant::vanilla;
  c.m = 30;
  c.rounds = 4;
  const auto run = run_seed(c, load_dataset(c.dataset), 1);
  // 28 unlabeled per domain: rounds 1 and 2 take 10 each, round 3 cannot.
  EXPECT_TRUE(run.truncated);
  EXPECT_EQ(run.rounds.size(), 3u);
  const std::string csv = metrics_csv({c, {run}});
  EXPECT_NE(csv.find(",1\n"), std::string::npos);
}

TEST(Export, FilesAndRerunsAreByteIdentical) {
  auto c = tiny();
  c.bounds = true;
  c.seeds = {1, 2};
  const auto a = scratch("a"), b = scratch("b");
  export_outputs(run_experiment(c), a.string());
  export_outputs(run_experiment(c), b.string());
  const std::string metrics = slurp(a / "metrics.csv");
  EXPECT_EQ(metrics, slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "bounds.csv"), slurp(b / "bounds.csv"));
  // Header plus (N + 1) rows per seed and round.
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 2 * 3 * 4);
  for (int s : {1, 2})
    for (int r = 0; r <= 2; ++r) {
      const auto alpha = SimilarityMatrix::from_csv(
          slurp(a / ("seed_" + std::to_string(s)) / ("alpha_round_" + std::to_string(r) + ".csv")));
      EXPECT_TRUE(alpha.valid(1e-6));
      EXPECT_TRUE(fs::exists(a / ("seed_" + std::to_string(s)) / ("history_round_" + std::to_string(r) + ".csv")));
    }
  EXPECT_EQ(parse_config_text(slurp(a / "config.resolved")), c);
  fs::remove_all(a);
  fs::remove_all(b);
}
