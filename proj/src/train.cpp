#include "rtcav/train.hpp"

#include <limits>
#include <numeric>

namespace rtcav {

void TrainConfig::validate() const {
  if (!(lr > 0) || weight_decay < 0) throw InvalidConfig("learning rate must be positive and weight decay >= 0");
  if (batch_size == 0 || max_epochs == 0) throw InvalidConfig("batch_size and max_epochs must be positive");
  if (patience > max_epochs) throw InvalidConfig("patience cannot exceed max_epochs");
  augment.validate();
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"flip_h", c.flip_h},           {"flip_v", c.flip_v},
       {"rotations", c.rotations},     {"flip_probability", c.flip_probability},
       {"mixup_alpha", c.mixup_alpha}, {"mixup_enabled", c.mixup_enabled},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.flip_h = j.value("flip_h", d.flip_h);
  c.flip_v = j.value("flip_v", d.flip_v);
  c.rotations = j.value("rotations", d.rotations);
  c.flip_probability = j.value("flip_probability", d.flip_probability);
  c.mixup_alpha = j.value("mixup_alpha", d.mixup_alpha);
  c.mixup_enabled = j.value("mixup_enabled", d.mixup_enabled);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"augment_enabled", c.augment_enabled},
       {"augment", c.augment},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.augment_enabled = j.value("augment_enabled", d.augment_enabled);
  c.augment = j.value("augment", d.augment);
  c.seed = j.value("seed", d.seed);
}

nlohmann::json TrainedModel::summary() const {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : history)
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  return {{"train", config}, {"history", hist}, {"best_epoch", best_epoch}, {"stopped_early", stopped_early}};
}

namespace {

// Stream ids for derive_seed.
enum : std::uint64_t { kShuffle = 1, kAugment = 2, kMixup = 3, kDropout = 4 };

}  // namespace

TrainedModel train(ReferenceNet model, const SampleSet& train_set, const SampleSet& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0) throw EmptySplit("training split is empty");
  if (val_set.size() == 0) throw EmptySplit("validation split is empty");
  const std::size_t classes = model.config().num_classes;

  const Tensor val_x = stack_patches(val_set.patches);
  const Matrix val_y = one_hot(val_set.labels, classes);
  const Matrix train_y = one_hot(train_set.labels, classes);

  AdamWState opt(model.num_parameters());
  const AdamWConfig adam{cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, 1e-8};

  TrainedModel result{model, cfg, {}, 0, false};
  double best = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;
  const std::size_t n = train_set.size();
  Vector grad;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg.seed, kShuffle, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0, batch_no = 0; start < n; start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<LabeledPatch> batch;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        Patch p = train_set.patches[idx];
        if (cfg.augment_enabled) {
          Rng aug(derive_seed(cfg.augment.seed ^ cfg.seed, kAugment, epoch * n + idx));
          p = augment_flip_rotate(p, cfg.augment, aug);
        }
        const auto row = train_y.row(static_cast<Eigen::Index>(idx));
        batch.push_back({std::move(p.data), std::vector<double>(row.data(), row.data() + row.size())});
      }
      if (cfg.augment.mixup_enabled && batch.size() >= 2) {
        Rng mix(derive_seed(cfg.seed, kMixup, epoch * n + batch_no));
        batch = mixup(batch, cfg.augment.mixup_alpha, mix);
      }
      std::vector<Patch> patches;
      Matrix targets(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(classes));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        patches.push_back({batch[i].data, {}, 0});
        for (std::size_t k = 0; k < classes; ++k)
          targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = batch[i].label[k];
      }
      Rng dropout(derive_seed(cfg.seed, kDropout, epoch * n + batch_no));
      const double loss = model.loss_and_gradient(stack_patches(patches), targets, grad, &dropout);
      adamw_step(model.parameters(), grad, opt, adam);
      loss_sum += loss * static_cast<double>(batch.size());
    }

    const double val_loss = model.loss(val_x, val_y);
    result.history.push_back({epoch, loss_sum / static_cast<double>(n), val_loss});
    if (val_loss < best) {
      best = val_loss;
      result.best_epoch = epoch;
      result.net = model;
      wait = 0;
    } else if (++wait >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

std::vector<double> predict_proba(const ReferenceNet& net, const Tensor& batch, std::size_t k, std::size_t chunk) {
  std::vector<double> out;
  out.reserve(batch.dim(0));
  for (std::size_t start = 0; start < batch.dim(0); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(batch.dim(0), start + chunk); ++i) idx.push_back(i);
    const Matrix probs = softmax_rows(net.forward(batch_items(batch, idx)).logits);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) out.push_back(probs(i, static_cast<Eigen::Index>(k)));
  }
  return out;
}

}  // namespace rtcav
