#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mudal/bounds.hpp"
#include "mudal/idx.hpp"
#include "mudal/query.hpp"
#include "mudal/trainer.hpp"

namespace mudal {

enum class AssignMode { cal_optimal, separate, joint, paper_literal };

inline std::string to_string(AssignMode m) {
  switch (m) {
    case AssignMode::cal_optimal: return "cal_optimal";
    case AssignMode::separate: return "separate";
    case AssignMode::joint: return "joint";
    case AssignMode::paper_literal: return "paper_literal";
  }
  return "?";
}

inline AssignMode parse_mode(const std::string& s) {
  if (s == "cal_optimal") return AssignMode::cal_optimal;
  if (s == "separate") return AssignMode::separate;
  if (s == "joint") return AssignMode::joint;
  if (s == "paper_literal") return AssignMode::paper_literal;
  throw ConfigError("unknown mode '" + s + "' (cal_optimal | separate | joint | paper_literal)");
}

struct DatasetConfig {
  std::string source = "rotating";  // rotating | idx
  RotatingSpec rotating;            // n_domains, sizes, angle range and seed also drive idx
  std::string images;
  std::string labels;

  bool operator==(const DatasetConfig&) const = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  Strategy strategy = Strategy::grads;
  AssignMode mode = AssignMode::cal_optimal;
  std::size_t m0 = 60;
  std::size_t m = 60;
  std::size_t rounds = 5;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "out";
  bool bounds = true;
  double bound_d = 1.0;
  double bound_delta = 0.05;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    train.validate();
    const auto n = dataset.rotating.n_domains;
    if (n == 0) throw ConfigError("dataset.n_domains must be >= 1");
    if (dataset.source != "rotating" && dataset.source != "idx")
      throw ConfigError("dataset.source must be rotating or idx");
    if (dataset.source == "idx" && (dataset.images.empty() || dataset.labels.empty()))
      throw ConfigError("dataset.images and dataset.labels are required for source = idx");
    if ((mode == AssignMode::cal_optimal || mode == AssignMode::separate) && (m0 < n || m < n))
      throw ConfigError("budget.m0 and budget.m must be >= n_domains in " + to_string(mode) + " mode");
    if (mode == AssignMode::separate && m % n != 0)
      throw ConfigError("budget.m must be a multiple of n_domains in separate mode");
    if (m0 == 0) throw ConfigError("budget.m0 must be >= 1");
    if (seeds.empty()) throw ConfigError("budget.seeds must list at least one seed");
    if (strategy == Strategy::grads && !trains_discriminator(train.variant))
      throw ConfigError("strategy grads needs a variant that trains the discriminator");
    if (!(bound_d > 0.0) || !(bound_delta > 0.0 && bound_delta < 1.0))
      throw ConfigError("output.bound_d must be > 0 and output.bound_delta in (0, 1)");
  }
};

namespace detail {

inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t") - a + 1);
}

inline double to_double(const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("expected a number, got '" + v + "'");
}

inline std::uint64_t to_uint(const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto u = std::stoull(v, &used);
      if (used == v.size()) return u;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("expected a nonnegative integer, got '" + v + "'");
}

inline bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

template <class T>
std::vector<T> to_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream in(v);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(static_cast<T>(to_uint(trim(cell))));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;
struct Field {
  Setter set;
  Getter get;
};

// One table drives parsing, validation of key names and serialization.
inline const std::map<std::string, std::vector<std::pair<std::string, Field>>>& schema() {
  using C = ExperimentConfig;
  auto num = [](auto member) {
    return Field{[member](C& c, const std::string& v) { member(c) = to_double(v); },
                 [member](const C& c) { return exact(member(const_cast<C&>(c))); }};
  };
  auto uint = [](auto member) {
    return Field{[member](C& c, const std::string& v) {
                   member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_uint(v));
                 },
                 [member](const C& c) { return std::to_string(member(const_cast<C&>(c))); }};
  };
  auto flag = [](auto member) {
    return Field{[member](C& c, const std::string& v) { member(c) = to_bool(v); },
                 [member](const C& c) { return std::string(member(const_cast<C&>(c)) ? "true" : "false"); }};
  };
  auto text = [](auto member) {
    return Field{[member](C& c, const std::string& v) { member(c) = v; },
                 [member](const C& c) { return member(const_cast<C&>(c)); }};
  };
  auto sizes = [](auto member) {
    return Field{[member](C& c, const std::string& v) { member(c) = to_list<std::size_t>(v); },
                 [member](const C& c) { return join_list(member(const_cast<C&>(c))); }};
  };
  static const std::map<std::string, std::vector<std::pair<std::string, Field>>> s = {
      {"dataset",
       {{"source", text([](C& c) -> auto& { return c.dataset.source; })},
        {"n_domains", uint([](C& c) -> auto& { return c.dataset.rotating.n_domains; })},
        {"train_per_domain", uint([](C& c) -> auto& { return c.dataset.rotating.train_per_domain; })},
        {"test_per_domain", uint([](C& c) -> auto& { return c.dataset.rotating.test_per_domain; })},
        {"n_classes", uint([](C& c) -> auto& { return c.dataset.rotating.n_classes; })},
        {"angle_range", num([](C& c) -> auto& { return c.dataset.rotating.angle_range_deg; })},
        {"shape", Field{[](C& c, const std::string& v) {
                          if (v == "blobs") c.dataset.rotating.shape = BaseShape::gaussian_blobs;
                          else if (v == "moons") c.dataset.rotating.shape = BaseShape::two_moons_k;
                          else throw ConfigError("shape must be blobs or moons, got '" + v + "'");
                        },
                        [](const C& c) {
                          return std::string(c.dataset.rotating.shape == BaseShape::gaussian_blobs ? "blobs" : "moons");
                        }}},
        {"noise", num([](C& c) -> auto& { return c.dataset.rotating.noise; })},
        {"dim", uint([](C& c) -> auto& { return c.dataset.rotating.dim; })},
        {"seed", uint([](C& c) -> auto& { return c.dataset.rotating.seed; })},
        {"images", text([](C& c) -> auto& { return c.dataset.images; })},
        {"labels", text([](C& c) -> auto& { return c.dataset.labels; })}}},
      {"method",
       {{"variant", Field{[](C& c, const std::string& v) { c.train.variant = parse_variant(v); },
                          [](const C& c) { return to_string(c.train.variant); }}},
        {"strategy", Field{[](C& c, const std::string& v) { c.strategy = parse_strategy(v); },
                           [](const C& c) { return to_string(c.strategy); }}},
        {"mode", Field{[](C& c, const std::string& v) { c.mode = parse_mode(v); },
                       [](const C& c) { return to_string(c.mode); }}}}},
      {"train",
       {{"lambda_d", num([](C& c) -> auto& { return c.train.lambda_d; })},
        {"epochs", uint([](C& c) -> auto& { return c.train.epochs; })},
        {"batch_size", uint([](C& c) -> auto& { return c.train.batch_size; })},
        {"labeled_batch_size", uint([](C& c) -> auto& { return c.train.labeled_batch_size; })},
        {"lr", num([](C& c) -> auto& { return c.train.lr; })},
        {"lr_disc", num([](C& c) -> auto& { return c.train.lr_disc; })},
        {"lr_alpha", num([](C& c) -> auto& { return c.train.lr_alpha; })},
        {"temperature", num([](C& c) -> auto& { return c.train.temperature; })},
        {"extra_disc_step", flag([](C& c) -> auto& { return c.train.extra_disc_step; })},
        {"onehot_codes", flag([](C& c) -> auto& { return c.train.onehot_codes; })},
        {"warm_start", flag([](C& c) -> auto& { return c.train.warm_start; })},
        {"disc_line_search", flag([](C& c) -> auto& { return c.train.disc_line_search; })},
        {"disc_gd_step", num([](C& c) -> auto& { return c.train.disc_gd_step; })},
        {"feature_dim", uint([](C& c) -> auto& { return c.train.feature_dim; })},
        {"encoder_hidden", sizes([](C& c) -> auto& { return c.train.encoder_hidden; })},
        {"classifier_hidden", sizes([](C& c) -> auto& { return c.train.classifier_hidden; })},
        {"discriminator_hidden", sizes([](C& c) -> auto& { return c.train.discriminator_hidden; })}}},
      {"budget",
       {{"m0", uint([](C& c) -> auto& { return c.m0; })},
        {"m", uint([](C& c) -> auto& { return c.m; })},
        {"rounds", uint([](C& c) -> auto& { return c.rounds; })},
        {"seeds", Field{[](C& c, const std::string& v) { c.seeds = to_list<std::uint64_t>(v); },
                        [](const C& c) { return join_list(c.seeds); }}}}},
      {"output",
       {{"dir", text([](C& c) -> auto& { return c.output_dir; })},
        {"bounds", flag([](C& c) -> auto& { return c.bounds; })},
        {"bound_d", num([](C& c) -> auto& { return c.bound_d; })},
        {"bound_delta", num([](C& c) -> auto& { return c.bound_delta; })}}},
  };
  return s;
}

}  // namespace detail

/// Parses the INI-style config text. Unknown sections and keys are errors;
/// anything left out takes its default.
inline ExperimentConfig parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg;
  const auto& schema = detail::schema();
  for (const auto& [section, body] : tree) {
    const auto it = schema.find(section);
    if (it == schema.end()) {
      if (!body.data().empty()) throw ConfigError("key '" + section + "' outside any section");
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const auto f = std::find_if(it->second.begin(), it->second.end(), [&k = key](const auto& e) { return e.first == k; });
      if (f == it->second.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      try {
        f->second.set(cfg, detail::trim(value.data()));
      } catch (const ConfigError& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

/// Every key, in schema order; parse_config_text(serialize(c)) == c.
inline std::string serialize(const ExperimentConfig& cfg) {
  std::string out;
  for (const char* section : {"dataset", "method", "train", "budget", "output"}) {
    out += std::string(out.empty() ? "" : "\n") + "[" + section + "]\n";
    for (const auto& [key, field] : detail::schema().at(section)) out += key + " = " + field.get(cfg) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment loop

struct RoundMetrics {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::vector<double> accuracy;
  double average = 0.0;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> increments;
  std::vector<double> h_distance;  // empty when bounds are off
  SimilarityMatrix alpha;
  std::optional<BoundReport> bound;
  std::vector<ObjectiveSnapshot> history;
  bool clamped = false;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RoundMetrics> rounds;
  bool truncated = false;
  std::size_t revealed = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedRun> runs;
};

inline MultiDomainDataset load_dataset(const DatasetConfig& d) {
  if (d.source == "rotating") return gen_rotating(d.rotating);
  RotationPlan plan;
  plan.n_domains = d.rotating.n_domains;
  plan.train_per_domain = d.rotating.train_per_domain;
  plan.test_per_domain = d.rotating.test_per_domain;
  plan.angle_range_deg = d.rotating.angle_range_deg;
  plan.seed = d.rotating.seed;
  return rotate_idx(load_idx(d.images, d.labels), plan);
}

namespace detail {

/// Bundle whose discriminator is trained, fitting one on frozen features if
/// the variant never trained its own.
inline ModelBundle with_discriminator(const ModelBundle& b, const MultiDomainDataset& data, const LabeledPool& pool,
                                      const SimilarityMatrix& alpha, std::uint64_t seed) {
  if (b.discriminator_trained) return b;
  ModelBundle out = b;
  std::vector<Matrix> zo, zl;
  for (std::size_t j = 0; j < data.n_domains(); ++j) {
    zo.push_back(encode(b, data.train_features(j)));
    const auto x = data.train_rows(j, pool.labeled(j));
    zl.push_back(x.rows() ? encode(b, x) : Matrix(0, b.encoder.output_dim()));
  }
  const auto o = DomainStack::build(zo);
  const auto l = DomainStack::build(zl);
  fit_discriminator(out.discriminator, out.code, o.x, o, l.x, l, alpha, {200, 1e-2, seed});
  out.discriminator_trained = true;
  return out;
}

inline std::vector<std::size_t> query_round(const ExperimentConfig& cfg, const MultiDomainDataset& data,
                                           LabeledPool& pool, const ModelBundle& bundle,
                                           const std::vector<std::size_t>& increments, std::uint64_t seed,
                                           std::size_t round) {
  const auto n = data.n_domains();
  std::vector<std::size_t> got(n, 0);
  auto run = [&](std::vector<SampleRef> cands, std::size_t k, std::uint64_t qseed) {
    QueryRequest req{&data, &bundle, std::move(cands), k, qseed};
    const auto picked = select(cfg.strategy, req, cfg.train.temperature);
    std::vector<std::vector<std::size_t>> by_domain(n);
    for (const auto& r : picked) by_domain[r.domain].push_back(r.index);
    for (std::size_t j = 0; j < n; ++j) {
      pool.reveal(j, by_domain[j]);
      got[j] += by_domain[j].size();
    }
  };
  if (cfg.mode == AssignMode::joint) {
    std::vector<SampleRef> all;
    for (std::size_t j = 0; j < n; ++j) {
      const auto refs = unlabeled_refs(pool, j);
      all.insert(all.end(), refs.begin(), refs.end());
    }
    run(std::move(all), cfg.m, mix_seed(seed, 5000 + 100 * round));
  } else {
    for (std::size_t j = 0; j < n; ++j)
      if (increments[j] > 0) run(unlabeled_refs(pool, j), increments[j], mix_seed(seed, 5000 + 100 * round + j));
  }
  return got;
}

}  // namespace detail

inline SeedRun run_seed(const ExperimentConfig& cfg, const MultiDomainDataset& data, std::uint64_t seed) {
  const auto n = data.n_domains();
  SeedRun run;
  run.seed = seed;
  LabeledPool pool = init_pool(data, cfg.m0, seed);
  std::vector<std::size_t> initial(n);
  for (std::size_t j = 0; j < n; ++j) initial[j] = pool.labeled_count(j);
  BudgetLedger ledger(cfg.m0, cfg.m, initial);
  run.revealed = cfg.m0;

  std::optional<TrainResult> prev;
  Vector prev_cols = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  for (std::size_t r = 0; r <= cfg.rounds; ++r) {
    RoundMetrics rm;
    rm.seed = seed;
    rm.round = r;
    if (r == 0) {
      rm.increments = initial;
    } else {
      std::vector<std::size_t> cap(n);
      std::size_t free = 0;
      for (std::size_t j = 0; j < n; ++j) free += (cap[j] = pool.unlabeled_count(j));
      const Vector cols = column_importance(prev->alpha);
      std::vector<std::size_t> inc(n, 0);
      bool short_pool = free < cfg.m;
      if (!short_pool) {
        switch (cfg.mode) {
          case AssignMode::cal_optimal:
          case AssignMode::paper_literal: {
            const auto a = assign_budget(cols, ledger, r, cap,
                                         cfg.mode == AssignMode::cal_optimal ? BudgetMode::target_tracking
                                                                             : BudgetMode::paper_literal,
                                         prev_cols);
            inc = a.increments;
            rm.clamped = a.clamped;
            if (a.clamped) std::clog << "seed " << seed << " round " << r << ": budget targets clamped\n";
            break;
          }
          case AssignMode::separate:
            for (std::size_t j = 0; j < n; ++j) {
              inc[j] = cfg.m / n;
              short_pool = short_pool || cap[j] < inc[j];
            }
            break;
          case AssignMode::joint:
            break;
        }
      }
      if (short_pool) {
        std::clog << "seed " << seed << ": unlabeled pool exhausted before round " << r << ", stopping\n";
        run.truncated = true;
        break;
      }
      prev_cols = cols;
      rm.increments = detail::query_round(cfg, data, pool, prev->bundle, inc, seed, r);
      ledger.record(rm.increments);
      run.revealed += cfg.m;
    }

    auto trained = train_round(data, pool, cfg.train, mix_seed(seed, r), prev ? &prev->bundle : nullptr);
    const auto ev = evaluate(trained.bundle, data);
    rm.accuracy = ev.domain_accuracy;
    rm.average = ev.average;
    for (std::size_t j = 0; j < n; ++j) rm.labeled.push_back(pool.labeled_count(j));
    rm.alpha = trained.alpha;
    rm.history = trained.history;
    if (cfg.bounds) {
      const auto b = detail::with_discriminator(trained.bundle, data, pool, trained.alpha, mix_seed(seed, 9000 + r));
      std::vector<Matrix> xl;
      for (std::size_t j = 0; j < n; ++j) xl.push_back(data.train_rows(j, pool.labeled(j)));
      for (std::size_t i = 0; i < n; ++i)
        rm.h_distance.push_back(estimate_h_distance(b, data.train_features(i), xl, trained.alpha.row(i), i));
      BoundReport rep = empirical_bound(b, data, pool, trained.alpha, {cfg.bound_d, cfg.bound_delta, 1});
      rep.variant = to_string(cfg.train.variant);
      rep.seed = seed;
      rep.round = r;
      rm.bound = rep;
    }
    run.rounds.push_back(std::move(rm));
    prev = std::move(trained);
  }
  return run;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_dataset(cfg.dataset);
  ExperimentResult out;
  out.config = cfg;
  for (auto seed : cfg.seeds) out.runs.push_back(run_seed(cfg, data, seed));
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline std::string metrics_csv(const ExperimentResult& res) {
  std::string out = "seed,round,domain,accuracy,labeled,increment,h_distance,truncated\n";
  for (const auto& run : res.runs) {
    for (const auto& rm : run.rounds) {
      const std::string s = std::to_string(rm.seed), r = std::to_string(rm.round), t = run.truncated ? "1" : "0";
      std::size_t lab = 0, inc = 0;
      double hd = 0.0;
      for (std::size_t j = 0; j < rm.accuracy.size(); ++j) {
        const std::string h = j < rm.h_distance.size() ? csv::num(rm.h_distance[j]) : "";
        out += csv::join({s, r, std::to_string(j), csv::num(rm.accuracy[j]), std::to_string(rm.labeled[j]),
                          std::to_string(rm.increments[j]), h, t}) +
               "\n";
        lab += rm.labeled[j];
        inc += rm.increments[j];
        if (j < rm.h_distance.size()) hd += rm.h_distance[j];
      }
      const std::string h = rm.h_distance.empty() ? "" : csv::num(hd / static_cast<double>(rm.h_distance.size()));
      out += csv::join({s, r, "average", csv::num(rm.average), std::to_string(lab), std::to_string(inc), h, t}) + "\n";
    }
  }
  return out;
}

/// metrics.csv, bounds.csv and config.resolved at the top of `dir`;
/// alpha_round_<r>.csv and history_round_<r>.csv under seed_<s>/.
inline void export_outputs(const ExperimentResult& res, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  csv::write_file((fs::path(dir) / "metrics.csv").string(), metrics_csv(res));
  std::string bounds = bounds_csv_header();
  for (const auto& run : res.runs)
    for (const auto& rm : run.rounds)
      if (rm.bound) bounds += bounds_csv_row(*rm.bound);
  csv::write_file((fs::path(dir) / "bounds.csv").string(), bounds);
  csv::write_file((fs::path(dir) / "config.resolved").string(), serialize(res.config));
  for (const auto& run : res.runs) {
    const auto sub = fs::path(dir) / ("seed_" + std::to_string(run.seed));
    fs::create_directories(sub);
    for (const auto& rm : run.rounds) {
      const auto r = std::to_string(rm.round);
      csv::write_file((sub / ("alpha_round_" + r + ".csv")).string(), rm.alpha.to_csv());
      csv::write_file((sub / ("history_round_" + r + ".csv")).string(), history_csv(rm.history, rm.alpha.size()));
    }
  }
}

}  // namespace mudal
