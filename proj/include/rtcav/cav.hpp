#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtcav/refnet.hpp"
#include "rtcav/tensor.hpp"

namespace rtcav {

// Unit concept direction: normalized difference of mean concept and mean
// random activations. The two means are kept for auditing.
struct Cav {
  std::string concept_id;
  std::string tap_id = kDefaultTap;
  Vector direction;
  Vector concept_mean;
  Vector random_mean;
};

Cav compute_cav(const Eigen::Ref<const Matrix>& concept_acts, const Eigen::Ref<const Matrix>& random_acts,
                std::string concept_id = {}, std::string tap_id = kDefaultTap);

// Directional derivative of the class logit along the CAV.
double sensitivity(const Eigen::Ref<const Vector>& gradient, const Cav& cav);
std::vector<double> sensitivities(const Eigen::Ref<const Matrix>& gradients, const Eigen::Ref<const Vector>& direction);

// Fraction of sensitivities strictly above `threshold`.
double tcav_score(std::span<const double> sensitivities, double threshold = 0.0);

struct TcavConfig {
  std::size_t iterations = 500;
  std::size_t random_sample_size = 500;
  double threshold = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TcavConfig& c);
void from_json(const nlohmann::json& j, TcavConfig& c);

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
  bool degenerate = false;  // zero spread: p is 0 or 1 by convention
};

// One-sample two-sided Student t-test of the mean against 0.5.
TTestResult t_test_vs_half(std::span<const double> scores);

struct TcavResult {
  std::string concept_id;
  int class_id = 0;
  TcavConfig config;
  std::vector<double> scores;  // per accepted iteration
  double mean = 0.0;
  double stddev = 0.0;  // n-1 denominator; 0 for a single score
  double t = 0.0;
  double p_value = 0.0;
  bool p_undefined = false;  // fewer than two scores
  bool degenerate = false;
  std::size_t n_examples = 0;
  std::size_t n_excluded = 0;
  std::size_t n_skipped = 0;  // iterations with a degenerate CAV

  nlohmann::json to_json() const;
  static TcavResult from_json(const nlohmann::json& j);
};

// Indices of the random rows used in bootstrap iteration `iteration`:
// stream Rng(derive_seed(seed, iteration)); a partial Fisher-Yates draw of
// `sample_size` rows when the pool is large enough, otherwise `sample_size`
// independent uniform draws with replacement.
std::vector<std::size_t> bootstrap_sample(std::size_t pool_size, std::size_t sample_size, std::uint64_t seed,
                                          std::size_t iteration);

// Robust TCAV: per iteration, resample the random pool, rebuild the CAV and
// score the class gradients; aggregate mean/std and the t-test against 0.5.
TcavResult bootstrap_tcav(const Eigen::Ref<const Matrix>& concept_acts, const Eigen::Ref<const Matrix>& random_pool,
                          const Eigen::Ref<const Matrix>& gradients, const TcavConfig& cfg,
                          const std::string& concept_id = {}, int class_id = 0, std::size_t n_excluded = 0);

}  // namespace rtcav
