#include "rtcav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rtcav/errors.hpp"

namespace rtcav {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw LengthMismatch("scores and labels differ in length");
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidLabel("AUC labels must be 0 or 1");
    if (std::isnan(scores[i])) throw InvalidConfig("AUC scores must not be NaN");
    (labels[i] == 1 ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0) throw SingleClass("AUC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Half-unit count: 2 per (pos > neg) pair, 1 per tied pair.
  unsigned long long half_units = 0, neg_below = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g;
    unsigned long long pos = 0, neg = 0;
    while (end < order.size() && scores[order[end]] == scores[order[g]]) {
      (labels[order[end]] == 1 ? pos : neg)++;
      ++end;
    }
    half_units += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    g = end;
  }
  return static_cast<double>(half_units) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ReliabilityTier reliability_tier(double a) {
  if (a >= 0.8) return ReliabilityTier::excellent;
  if (a >= 0.7) return ReliabilityTier::reliable;
  return ReliabilityTier::unreliable;
}

const char* tier_name(ReliabilityTier t) {
  switch (t) {
    case ReliabilityTier::excellent: return "excellent";
    case ReliabilityTier::reliable: return "reliable";
    default: return "unreliable";
  }
}

EvalMetrics EvalMetrics::compute(std::span<const double> scores, std::span<const int> labels) {
  EvalMetrics m;
  m.auc = rtcav::auc(scores, labels);
  m.tier = reliability_tier(m.auc);
  m.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  m.n_negative = labels.size() - m.n_positive;
  return m;
}

nlohmann::json EvalMetrics::to_json() const {
  return {{"auc", auc}, {"reliability_tier", tier_name(tier)}, {"n_positive", n_positive}, {"n_negative", n_negative}};
}

EvalMetrics EvalMetrics::from_json(const nlohmann::json& j) {
  EvalMetrics m;
  m.auc = j.at("auc").get<double>();
  m.tier = reliability_tier(m.auc);
  m.n_positive = j.value("n_positive", std::size_t{0});
  m.n_negative = j.value("n_negative", std::size_t{0});
  return m;
}

}  // namespace rtcav
