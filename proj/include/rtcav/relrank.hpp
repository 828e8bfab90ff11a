#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtcav/tensor.hpp"

namespace rtcav {

struct ConceptActivations {
  std::string concept_id;
  Matrix activations;  // [n_c, m]
  Vector mean;

  static ConceptActivations from(std::string id, Matrix activations);
};

// Unit vector from mu_j toward mu_i.
Vector relative_direction(const Eigen::Ref<const Vector>& mu_i, const Eigen::Ref<const Vector>& mu_j);

// Fraction of gradient rows with dot(row, direction) > threshold.
double relative_tcav(const Eigen::Ref<const Matrix>& gradients, const Eigen::Ref<const Vector>& direction,
                     double threshold = 0.0);

struct RankEntry {
  std::string concept_id;
  std::size_t wins = 0;
  std::size_t draws = 0;
  double mean_pairwise = 0.0;  // mean of score(i, j) over evaluated j
};

struct RankingTable {
  int class_id = 0;
  double threshold = 0.0;
  bool direction_normalized = true;
  std::string source;  // bundle the gradients came from
  std::vector<RankEntry> ranking;  // sorted
  std::vector<std::string> concepts;  // input order; indexes `pairwise`
  // pairwise[i][j] = relative TCAV toward concept i against j; nullopt on
  // the diagonal and for degenerate pairs.
  std::vector<std::vector<std::optional<double>>> pairwise;
  std::vector<std::pair<std::string, std::string>> degenerate_pairs;
  std::size_t evaluations = 0;

  nlohmann::json to_json() const;
  static RankingTable from_json(const nlohmann::json& j);
};

// Every ordered pair is scored; i wins against j when score(i,j) >
// score(j,i), equal scores are a draw. Ordering: wins desc, then mean
// pairwise score desc, then concept id.
RankingTable tournament_rank(const std::vector<ConceptActivations>& concepts, const Eigen::Ref<const Matrix>& gradients,
                             int class_id, double threshold = 0.0);

// Ranks from an already computed pairwise matrix (used by the above).
std::vector<RankEntry> rank_from_pairwise(const std::vector<std::string>& concepts,
                                          const std::vector<std::vector<std::optional<double>>>& pairwise);

}  // namespace rtcav
