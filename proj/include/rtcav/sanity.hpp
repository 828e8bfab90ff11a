#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "rtcav/cav.hpp"
#include "rtcav/metrics.hpp"
#include "rtcav/raster.hpp"
#include "rtcav/train.hpp"

namespace rtcav {

struct SanityConfig {
  double test_frac = 0.2;
  double val_frac = 0.16;
  double min_auc = 0.7;  // discriminability gate for `success`
  NetworkConfig network;
  TrainConfig train;
  TcavConfig tcav;
  std::uint64_t seed = 0;
};

struct SanityReport {
  std::string concept_id;
  std::string model = "reference-net";
  EvalMetrics metrics;
  TcavResult presence;  // concept CAV scored on class-1 test patches
  TcavResult absence;   // ... and on class-0 test patches
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  bool success = false;

  nlohmann::json to_json() const;
};

// Binary concept-vs-contrast classifier on a random 64/16/20 split, then
// the concept's self-influence: the CAV (concept vs contrast training
// patches) scored on test patches of each class. Success needs a reliable
// AUC, TCAV(Presence) > 0.5 and TCAV(Absence) < 0.5.
SanityReport sanity_check(const SampleSet& concept_patches, const SampleSet& contrast_patches, const SanityConfig& cfg,
                          const std::string& concept_id = "concept");

}  // namespace rtcav
