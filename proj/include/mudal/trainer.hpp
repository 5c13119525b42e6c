#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mudal/csv.hpp"
#include "mudal/objective.hpp"

namespace mudal {

struct TrainConfig {
  Variant variant = Variant::cal;
  double lambda_d = 1.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;          // per original domain
  std::size_t labeled_batch_size = 16;  // per labeled domain
  double lr = 1e-3;
  double lr_disc = 1e-3;
  double lr_alpha = 0.05;
  double temperature = 0.5;  // GraDS
  bool extra_disc_step = false;
  bool onehot_codes = true;
  bool warm_start = false;
  // Plain gradient descent with backtracking for f instead of Adam.
  bool disc_line_search = false;
  double disc_gd_step = 1.0;

  std::size_t feature_dim = 16;
  std::vector<std::size_t> encoder_hidden = {32};
  std::vector<std::size_t> classifier_hidden = {32};
  std::vector<std::size_t> discriminator_hidden = {32, 32};

  void validate() const {
    if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d)) throw ConfigError("lambda_d must be >= 0");
    if (!(lr > 0.0) || !(lr_disc > 0.0) || !(lr_alpha > 0.0) || !(disc_gd_step > 0.0))
      throw ConfigError("learning rates must be > 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (batch_size == 0 || labeled_batch_size == 0) throw ConfigError("batch sizes must be >= 1");
    if (feature_dim == 0 || classifier_hidden.empty()) throw ConfigError("feature_dim and classifier_hidden required");
  }

  bool operator==(const TrainConfig&) const = default;

  Architecture architecture(const MultiDomainDataset& data) const {
    Architecture a;
    a.input_dim = data.feature_dim();
    a.n_classes = data.n_classes();
    a.n_domains = data.n_domains();
    a.feature_dim = feature_dim;
    a.encoder_hidden = encoder_hidden;
    a.classifier_hidden = classifier_hidden;
    a.discriminator_hidden = discriminator_hidden;
    a.code = onehot_codes ? DomainCode::onehot : DomainCode::scalar;
    return a;
  }
};

/// End-of-epoch values on the last minibatch of the epoch.
struct ObjectiveSnapshot {
  std::size_t epoch = 0;
  double vh = 0.0;
  double vd = 0.0;
  double vlambda = 0.0;
  double vh01 = 0.0;
  double vlambda01 = 0.0;
  double total = 0.0;
  std::vector<double> disc_accuracy;
};

inline std::string history_csv(const std::vector<ObjectiveSnapshot>& history, std::size_t n_domains) {
  std::vector<std::string> head{"epoch", "V_h", "V_d", "V_lambda", "T"};
  for (std::size_t i = 0; i < n_domains; ++i) head.push_back("disc_acc_" + std::to_string(i));
  std::string out = csv::join(head) + "\n";
  for (const auto& s : history) {
    std::vector<std::string> row{std::to_string(s.epoch), csv::num(s.vh), csv::num(s.vd), csv::num(s.vlambda),
                                 csv::num(s.total)};
    for (std::size_t i = 0; i < n_domains; ++i)
      row.push_back(i < s.disc_accuracy.size() ? csv::num(s.disc_accuracy[i]) : "");
    out += csv::join(row) + "\n";
  }
  return out;
}

struct TrainResult {
  ModelBundle bundle;
  SimilarityMatrix alpha;
  std::vector<ObjectiveSnapshot> history;
};

namespace detail {

struct Optimizers {
  AdamState encoder, trunk, classifier, discriminator;
  std::vector<AdamState> heads;

  explicit Optimizers(const ModelBundle& b)
      : encoder(b.encoder), trunk(b.trunk), classifier(b.classifier), discriminator(b.discriminator) {
    for (const auto& h : b.heads) heads.emplace_back(h);
  }
};

/// Cycles through a shuffled index list, reshuffling at every wrap.
class Cycler {
 public:
  Cycler(std::vector<std::size_t> items, Rng rng) : items_(std::move(items)), rng_(std::move(rng)) {
    shuffle(items_, rng_);
  }
  std::vector<std::size_t> take(std::size_t k) {
    std::vector<std::size_t> out;
    k = std::min(k, items_.size());
    out.reserve(k);
    while (out.size() < k) {
      if (pos_ == items_.size()) {
        shuffle(items_, rng_);
        pos_ = 0;
      }
      out.push_back(items_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> items_;
  Rng rng_;
  std::size_t pos_ = 0;
};

inline void check_finite(double v, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(v))
    throw NumericalError(std::string("train_round: non-finite ") + what + " at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(step));
}

inline void discriminator_update(ModelBundle& b, Optimizers& opt, const TrainConfig& cfg, const Matrix& zo,
                                 const DomainStack& o, const Matrix& zl, const DomainStack& l,
                                 const SimilarityMatrix& alpha, std::size_t epoch, std::size_t step) {
  auto term = compute_vd(b, zo, o, zl, l, alpha);
  check_finite(term.value, "V_d", epoch, step);
  if (!cfg.disc_line_search) {
    adam_step(b.discriminator, term.discriminator, opt.discriminator, cfg.lr_disc);
    return;
  }
  const DenseNet before = b.discriminator;
  double eta = cfg.disc_gd_step;
  for (int attempt = 0; attempt < 40; ++attempt, eta *= 0.5) {
    b.discriminator = before;
    for (std::size_t k = 0; k < before.num_layers(); ++k) {
      auto& layer = b.discriminator.mutable_layer(k);
      layer.weight -= eta * term.discriminator.weight[k];
      layer.bias -= eta * term.discriminator.bias[k];
    }
    if (compute_vd(b, zo, o, zl, l, alpha, false).value <= term.value) return;
  }
  b.discriminator = before;
}

}  // namespace detail

/// One round of CAL training on the current labeled pool.
///
/// Per minibatch: f descends V_d, alpha takes a projected step on the 0/1
/// objective, then e, h and h_i descend V_h - lambda_d V_d + V_lambda. The
/// variant decides which of these run and which terms reach e.
inline TrainResult train_round(const MultiDomainDataset& data, const LabeledPool& pool, const TrainConfig& cfg,
                               std::uint64_t seed, const ModelBundle* warm = nullptr) {
  cfg.validate();
  const auto n = data.n_domains();
  if (pool.n_domains() != n) throw InvalidArgument("train_round: pool does not match dataset");
  if (pool.total_labeled() == 0) throw InvalidArgument("train_round: no labeled data");

  TrainResult out;
  out.bundle = (cfg.warm_start && warm) ? *warm : ModelBundle::create(cfg.architecture(data), mix_seed(seed, 11));
  out.alpha = SimilarityMatrix::uniform(n);
  auto& b = out.bundle;
  detail::Optimizers opt(b);

  const bool disc = trains_discriminator(cfg.variant);
  const bool heads = uses_heads(cfg.variant);
  const bool align = aligns_features(cfg.variant);
  const bool move_alpha = updates_alpha(cfg.variant) && n > 1;

  std::vector<detail::Cycler> labeled_cyc, original_cyc;
  std::size_t steps = 1;
  for (std::size_t j = 0; j < n; ++j) {
    labeled_cyc.emplace_back(pool.labeled(j), make_rng(seed, 2000 + j));
    std::vector<std::size_t> all(data.train_size(j));
    for (std::size_t s = 0; s < all.size(); ++s) all[s] = s;
    original_cyc.emplace_back(std::move(all), make_rng(seed, 3000 + j));
    steps = std::max(steps, (data.train_size(j) + cfg.batch_size - 1) / cfg.batch_size);
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    ObjectiveSnapshot snap;
    snap.epoch = epoch;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Matrix> lx, ox;
      std::vector<std::vector<int>> ly;
      for (std::size_t j = 0; j < n; ++j) {
        const auto idx = labeled_cyc[j].take(cfg.labeled_batch_size);
        lx.push_back(data.train_rows(j, idx));
        std::vector<int> y;
        y.reserve(idx.size());
        for (auto s : idx) y.push_back(pool.label(j, s));
        ly.push_back(std::move(y));
        if (disc) ox.push_back(data.train_rows(j, original_cyc[j].take(cfg.batch_size)));
      }
      const auto labeled = DomainStack::build(lx, ly);
      DomainStack original;
      if (disc) original = DomainStack::build(ox);

      auto zl_trace = forward(b.encoder, labeled.x);
      ActivationTrace zo_trace;
      if (disc) zo_trace = forward(b.encoder, original.x);

      if (disc) {
        detail::discriminator_update(b, opt, cfg, zo_trace.output(), original, zl_trace.output(), labeled, out.alpha,
                                     epoch, step);
      }
      if (move_alpha) {
        const auto vd01 = compute_vd(b, zo_trace.output(), original, zl_trace.output(), labeled, out.alpha, false);
        const auto tt = forward(b.trunk, zl_trace.output());
        const auto vh01 = compute_vh(b, zl_trace.output(), labeled, out.alpha, &tt);
        Matrix head_err;
        if (heads) head_err = compute_vlambda(b, zl_trace.output(), labeled, out.alpha, &tt).pair_error;
        const auto coeff = alpha_coefficients(vh01.domain_error, head_err, vd01.pair_error, cfg.lambda_d);
        out.alpha = alpha_step(out.alpha, coeff, cfg.lr_alpha).alpha;
      }
      if (disc && cfg.extra_disc_step) {
        detail::discriminator_update(b, opt, cfg, zo_trace.output(), original, zl_trace.output(), labeled, out.alpha,
                                     epoch, step);
      }

      // Encoder and classifiers.
      const auto& zl = zl_trace.output();
      const auto tt = forward(b.trunk, zl);
      auto vh = compute_vh(b, zl, labeled, out.alpha, &tt);
      detail::check_finite(vh.value, "V_h", epoch, step);
      Gradients trunk_grad = vh.trunk;
      Matrix dzl = vh.feature_grad;
      std::optional<HeadTerm> vl;
      if (heads) {
        vl = compute_vlambda(b, zl, labeled, out.alpha, &tt);
        detail::check_finite(vl->value, "V_lambda", epoch, step);
        trunk_grad += vl->trunk;
        dzl += vl->feature_grad;
      }
      std::optional<DiscriminatorTerm> vd;
      if (disc) {
        vd = compute_vd(b, zo_trace.output(), original, zl, labeled, out.alpha, align);
        detail::check_finite(vd->value, "V_d", epoch, step);
      }
      Gradients enc_grad = backward(b.encoder, zl_trace, dzl);
      if (disc && align) {
        // e maximizes V_d: the sign flip of the adversarial game.
        enc_grad += backward(b.encoder, zl_trace, -cfg.lambda_d * vd->labeled_feature_grad);
        enc_grad += backward(b.encoder, zo_trace, -cfg.lambda_d * vd->original_feature_grad);
      }
      adam_step(b.encoder, enc_grad, opt.encoder, cfg.lr);
      adam_step(b.trunk, trunk_grad, opt.trunk, cfg.lr);
      adam_step(b.classifier, vh.classifier, opt.classifier, cfg.lr);
      if (heads)
        for (std::size_t i = 0; i < n; ++i) adam_step(b.heads[i], vl->heads[i], opt.heads[i], cfg.lr);

      if (step + 1 == steps) {
        snap.vh = vh.value;
        const auto cols = column_importance(out.alpha);
        for (std::size_t j = 0; j < n; ++j) snap.vh01 += cols[static_cast<Eigen::Index>(j)] * vh.domain_error[j];
        if (vl) {
          snap.vlambda = vl->value;
          snap.vlambda01 = out.alpha.matrix().cwiseProduct(vl->pair_error).sum() / static_cast<double>(n);
        }
        if (vd) {
          snap.vd = vd->value;
          snap.disc_accuracy.assign(vd->accuracy.data(), vd->accuracy.data() + vd->accuracy.size());
        }
        snap.total = snap.vh - cfg.lambda_d * snap.vd + snap.vlambda;
      }
    }
    out.history.push_back(std::move(snap));
  }
  b.discriminator_trained = disc;
  return out;
}

}  // namespace mudal
