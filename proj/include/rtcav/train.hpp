#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtcav/raster.hpp"
#include "rtcav/refnet.hpp"

namespace rtcav {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  bool augment_enabled = true;
  AugmentConfig augment;  // mixup_enabled lives here
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainedModel {
  ReferenceNet net;
  TrainConfig config;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  nlohmann::json summary() const;  // config, history, best epoch
};

// Minibatch AdamW on soft-label cross-entropy with geometric augmentation
// and optional MixUp. Stops once the validation loss has not improved for
// `patience` consecutive epochs (patience 0: at the first non-improving
// epoch) and returns the parameters of the best validation epoch.
TrainedModel train(ReferenceNet model, const SampleSet& train_set, const SampleSet& val_set, const TrainConfig& cfg);

// Class-`k` softmax probability per sample in inference mode.
std::vector<double> predict_proba(const ReferenceNet& net, const Tensor& batch, std::size_t k = 1,
                                  std::size_t chunk = 64);

}  // namespace rtcav
