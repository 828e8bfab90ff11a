#include "rtcav/relrank.hpp"

#include <algorithm>
#include <numeric>

#include "rtcav/cav.hpp"
#include "rtcav/parallel.hpp"

namespace rtcav {

ConceptActivations ConceptActivations::from(std::string id, Matrix activations) {
  ConceptActivations c{std::move(id), std::move(activations), {}};
  c.mean = mean_rows(c.activations);
  return c;
}

Vector relative_direction(const Eigen::Ref<const Vector>& mu_i, const Eigen::Ref<const Vector>& mu_j) {
  if (mu_i.size() != mu_j.size()) throw LengthMismatch("concept means differ in length");
  const Vector diff = mu_i - mu_j;
  try {
    return l2_normalize(diff);
  } catch (const ZeroVector&) {
    throw DegeneratePair("concept means coincide");
  }
}

double relative_tcav(const Eigen::Ref<const Matrix>& gradients, const Eigen::Ref<const Vector>& direction,
                     double threshold) {
  if (gradients.rows() == 0) throw EmptyInput("relative TCAV of an empty gradient set");
  return tcav_score(sensitivities(gradients, direction), threshold);
}

std::vector<RankEntry> rank_from_pairwise(const std::vector<std::string>& concepts,
                                          const std::vector<std::vector<std::optional<double>>>& pairwise) {
  const std::size_t k = concepts.size();
  std::vector<RankEntry> entries(k);
  // Sum in concept-id order so the mean does not depend on input order.
  std::vector<std::size_t> by_id(k);
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return concepts[a] < concepts[b]; });
  for (std::size_t i = 0; i < k; ++i) {
    auto& e = entries[i];
    e.concept_id = concepts[i];
    double sum = 0.0;
    std::size_t evaluated = 0;
    for (std::size_t j : by_id) {
      if (i == j || !pairwise[i][j] || !pairwise[j][i]) continue;
      const double sij = *pairwise[i][j], sji = *pairwise[j][i];
      sum += sij;
      ++evaluated;
      if (sij > sji) {
        ++e.wins;
      } else if (sij == sji) {
        ++e.draws;
      }
    }
    e.mean_pairwise = evaluated ? sum / static_cast<double>(evaluated) : 0.0;
  }
  std::sort(entries.begin(), entries.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.wins != b.wins) return a.wins > b.wins;
    if (a.mean_pairwise != b.mean_pairwise) return a.mean_pairwise > b.mean_pairwise;
    return a.concept_id < b.concept_id;
  });
  return entries;
}

RankingTable tournament_rank(const std::vector<ConceptActivations>& concepts, const Eigen::Ref<const Matrix>& gradients,
                             int class_id, double threshold) {
  const std::size_t k = concepts.size();
  if (k < 2) throw InsufficientData("ranking needs at least two concepts");
  RankingTable table;
  table.class_id = class_id;
  table.threshold = threshold;
  for (const auto& c : concepts) table.concepts.push_back(c.concept_id);
  table.pairwise.assign(k, std::vector<std::optional<double>>(k));

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) pairs.emplace_back(i, j);
  std::vector<char> degenerate(pairs.size(), 0);
  parallel_for(pairs.size(), [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    try {
      const Vector dir = relative_direction(concepts[i].mean, concepts[j].mean);
      table.pairwise[i][j] = relative_tcav(gradients, dir, threshold);
    } catch (const DegeneratePair&) {
      degenerate[p] = 1;
    }
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (degenerate[p]) {
      if (pairs[p].first < pairs[p].second)
        table.degenerate_pairs.emplace_back(concepts[pairs[p].first].concept_id, concepts[pairs[p].second].concept_id);
    } else {
      ++table.evaluations;
    }
  }
  table.ranking = rank_from_pairwise(table.concepts, table.pairwise);
  return table;
}

nlohmann::json RankingTable::to_json() const {
  nlohmann::json ranks = nlohmann::json::array();
  for (std::size_t r = 0; r < ranking.size(); ++r)
    ranks.push_back({{"rank", r + 1},
                     {"concept", ranking[r].concept_id},
                     {"wins", ranking[r].wins},
                     {"draws", ranking[r].draws},
                     {"mean_pairwise", ranking[r].mean_pairwise}});
  nlohmann::json matrix = nlohmann::json::array();
  for (const auto& row : pairwise) {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& v : row) jr.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    matrix.push_back(jr);
  }
  nlohmann::json degen = nlohmann::json::array();
  for (const auto& [a, b] : degenerate_pairs) degen.push_back({a, b});
  return {{"class", class_id},
          {"threshold", threshold},
          {"direction_normalized", direction_normalized},
          {"threshold_sensitive_to_normalization", threshold > 0},
          {"source", source},
          {"ranking", ranks},
          {"concepts", concepts},
          {"pairwise", matrix},
          {"degenerate_pairs", degen},
          {"evaluations", evaluations}};
}

RankingTable RankingTable::from_json(const nlohmann::json& j) {
  RankingTable t;
  t.class_id = j.at("class").get<int>();
  t.threshold = j.value("threshold", 0.0);
  t.direction_normalized = j.value("direction_normalized", true);
  t.source = j.value("source", std::string{});
  t.concepts = j.at("concepts").get<std::vector<std::string>>();
  for (const auto& r : j.at("ranking"))
    t.ranking.push_back({r.at("concept").get<std::string>(), r.at("wins").get<std::size_t>(),
                         r.value("draws", std::size_t{0}), r.value("mean_pairwise", 0.0)});
  for (const auto& row : j.at("pairwise")) {
    std::vector<std::optional<double>> r;
    for (const auto& v : row) r.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    t.pairwise.push_back(std::move(r));
  }
  for (const auto& p : j.value("degenerate_pairs", nlohmann::json::array()))
    t.degenerate_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  t.evaluations = j.value("evaluations", std::size_t{0});
  return t;
}

}  // namespace rtcav
