#pragma once

#include <span>
#include <string>

#include <nlohmann/json.hpp>

namespace rtcav {

// Probability that a random positive outranks a random negative, ties
// counting one half (Mann-Whitney). Exact: the numerator is accumulated in
// integer half-units.
double auc(std::span<const double> scores, std::span<const int> labels);

enum class ReliabilityTier { unreliable, reliable, excellent };

// >= 0.8 excellent, >= 0.7 reliable, otherwise unreliable.
ReliabilityTier reliability_tier(double auc);
const char* tier_name(ReliabilityTier t);

struct EvalMetrics {
  double auc = 0.0;
  ReliabilityTier tier = ReliabilityTier::unreliable;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;

  static EvalMetrics compute(std::span<const double> scores, std::span<const int> labels);
  nlohmann::json to_json() const;
  static EvalMetrics from_json(const nlohmann::json& j);
};

}  // namespace rtcav
