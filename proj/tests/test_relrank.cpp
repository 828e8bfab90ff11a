#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "rtcav/relrank.hpp"

using namespace rtcav;

namespace {

Matrix random_matrix(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(gen);
  return m;
}

}  // namespace

TEST(RelativeDirection, Examples) {
  EXPECT_EQ(relative_direction(Vector{{1.0, 0.0}}, Vector{{0.0, 0.0}}), Vector({{1.0, 0.0}}));
  const Vector d = relative_direction(Vector{{2.0, 1.0}}, Vector{{0.0, -1.0}});
  EXPECT_NEAR(d[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(d[1], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(relative_direction(Vector{{1.0, 2.0}}, Vector{{1.0, 2.0}}), DegeneratePair);
  EXPECT_THROW(relative_direction(Vector{{1.0}}, Vector{{1.0, 2.0}}), LengthMismatch);
}

TEST(RelativeDirection, Antisymmetric) {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 100; ++t) {
    const Vector a = random_matrix(gen, 6, 1).col(0), b = random_matrix(gen, 6, 1).col(0);
    EXPECT_LE((relative_direction(a, b) + relative_direction(b, a)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RelativeTcav, OrthogonalIsZero) {
  EXPECT_EQ(relative_tcav(Matrix{{0, 1}, {0, -1}}, Vector{{1.0, 0.0}}), 0.0);
  EXPECT_THROW(relative_tcav(Matrix(0, 2), Vector{{1.0, 0.0}}), EmptyInput);
}

TEST(RelativeTcav, CraftedThreeOfFive) {
  const Matrix g{{1, 0, 0}, {0.5, 0.5, 0}, {0.2, -0.1, 1}, {-1, 0, 0}, {-0.3, 2, 0}};
  const Vector dir = Vector{{1.0, -0.2, 0.1}}.normalized();
  int positive = 0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) d += g(i, j) * dir[j];
    positive += d > 0.0;
  }
  ASSERT_EQ(positive, 3);
  EXPECT_DOUBLE_EQ(relative_tcav(g, dir), 0.6);
}

TEST(TournamentRank, ForcedDominance) {
  const auto a = ConceptActivations::from("A", Matrix{{1.0, 0.0}});
  const auto b = ConceptActivations::from("B", Matrix{{-1.0, 0.0}});
  const auto t = tournament_rank({b, a}, Matrix{{1.0, 0.1}, {1.0, -0.1}}, 1);
  ASSERT_EQ(t.ranking.size(), 2u);
  EXPECT_EQ(t.ranking[0].concept_id, "A");
  EXPECT_EQ(t.ranking[0].wins, 1u);
  EXPECT_EQ(t.ranking[1].wins, 0u);
  EXPECT_EQ(t.evaluations, 2u);
}

TEST(TournamentRank, TriangleAgainstEnumeration) {
  const std::vector<Vector> vertices = {Vector{{1.0, 0.0}}, Vector{{-0.5, 0.8660254}}, Vector{{-0.5, -0.8660254}}};
  std::vector<ConceptActivations> cs;
  const char* names[] = {"v1", "v2", "v3"};
  for (int i = 0; i < 3; ++i) cs.push_back(ConceptActivations::from(names[i], Matrix(vertices[i].transpose())));
  Matrix g(4, 2);
  g << 1.0, 0.05, 1.0, -0.05, 0.9, 0.0, 1.2, 0.1;
  const auto t = tournament_rank(cs, g, 1);

  std::vector<int> wins(3, 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const Vector d = (vertices[i] - vertices[j]).normalized();
      double sij = 0, sji = 0;
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        sij += g.row(r).dot(d) > 0;
        sji += g.row(r).dot(-d) > 0;
      }
      ASSERT_EQ(*t.pairwise[i][j], sij / 4.0);
      wins[i] += sij > sji;
    }
  EXPECT_EQ(wins[0], 2);
  EXPECT_EQ(t.ranking[0].concept_id, "v1");
  EXPECT_EQ(t.evaluations, 6u);
}

TEST(TournamentRank, FifteenConceptsGiveFifteenRows) {
  std::mt19937_64 gen(2);
  std::vector<ConceptActivations> cs;
  for (int i = 0; i < 15; ++i) cs.push_back(ConceptActivations::from("c" + std::to_string(i), random_matrix(gen, 4, 8)));
  const auto t = tournament_rank(cs, random_matrix(gen, 30, 8), 0);
  EXPECT_EQ(t.ranking.size(), 15u);
  EXPECT_EQ(t.evaluations, 15u * 14u);
  const auto j = t.to_json();
  EXPECT_EQ(j["ranking"].size(), 15u);
  EXPECT_EQ(j["ranking"][14]["rank"], 15);
  const auto back = RankingTable::from_json(j);
  EXPECT_EQ(back.pairwise, t.pairwise);
  EXPECT_EQ(back.ranking.front().concept_id, t.ranking.front().concept_id);
}

TEST(TournamentRank, DrawsAndTieBreak) {
  // With no gradients favoring either side, every pair is 0.5 vs 0.5.
  const std::vector<std::string> ids = {"b", "a", "c"};
  std::vector<std::vector<std::optional<double>>> pw(3, std::vector<std::optional<double>>(3));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) pw[i][j] = 0.5;
  const auto r = rank_from_pairwise(ids, pw);
  EXPECT_EQ(r[0].concept_id, "a");
  EXPECT_EQ(r[1].concept_id, "b");
  for (const auto& e : r) {
    EXPECT_EQ(e.wins, 0u);
    EXPECT_EQ(e.draws, 2u);
  }
}

TEST(TournamentRank, DegeneratePairIsSkippedAndReported) {
  const auto a = ConceptActivations::from("a", Matrix{{1.0, 0.0}});
  const auto a2 = ConceptActivations::from("a2", Matrix{{1.0, 0.0}});
  const auto b = ConceptActivations::from("b", Matrix{{0.0, 1.0}});
  const auto t = tournament_rank({a, a2, b}, Matrix{{1.0, 0.2}}, 1);
  ASSERT_EQ(t.degenerate_pairs.size(), 1u);
  EXPECT_EQ(t.degenerate_pairs[0], std::make_pair(std::string("a"), std::string("a2")));
  EXPECT_EQ(t.evaluations, 4u);
  EXPECT_FALSE(t.pairwise[0][1].has_value());
  EXPECT_THROW(tournament_rank({a}, Matrix{{1.0, 0.0}}, 1), InsufficientData);
}

TEST(ConceptActivations, MeanMatches) {
  std::mt19937_64 gen(3);
  const Matrix m = random_matrix(gen, 7, 5);
  const auto c = ConceptActivations::from("x", m);
  EXPECT_LE((c.mean - m.colwise().mean().transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

// Randomized properties.

TEST(RelrankProperties, Antisymmetry) {
  std::mt19937_64 gen(51);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(gen() % 8);
    const Vector mi = random_matrix(gen, m, 1).col(0), mj = random_matrix(gen, m, 1).col(0);
    const Matrix g = random_matrix(gen, 1 + static_cast<Eigen::Index>(gen() % 40), m);
    const Vector dij = relative_direction(mi, mj), dji = relative_direction(mj, mi);
    const Vector dots = g * dij;
    if ((dots.array() == 0.0).any()) continue;
    ASSERT_DOUBLE_EQ(relative_tcav(g, dij) + relative_tcav(g, dji), 1.0);
  }
}

TEST(RelrankProperties, NormalizationInvariantAtZero) {
  std::mt19937_64 gen(52);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(gen() % 8);
    const Vector mi = random_matrix(gen, m, 1).col(0) * scale(gen), mj = random_matrix(gen, m, 1).col(0);
    const Matrix g = random_matrix(gen, 1 + static_cast<Eigen::Index>(gen() % 40), m);
    ASSERT_EQ(relative_tcav(g, relative_direction(mi, mj)), relative_tcav(g, mi - mj));
  }
}

TEST(RelrankProperties, InputOrderDoesNotChangeTable) {
  std::mt19937_64 gen(53);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + gen() % 5;
    const Eigen::Index m = 3;
    std::vector<ConceptActivations> cs;
    for (std::size_t i = 0; i < k; ++i)
      cs.push_back(ConceptActivations::from("c" + std::to_string(i), random_matrix(gen, 2, m)));
    const Matrix g = random_matrix(gen, 9, m);
    const auto a = tournament_rank(cs, g, 1);
    std::shuffle(cs.begin(), cs.end(), gen);
    const auto b = tournament_rank(cs, g, 1);
    ASSERT_EQ(a.evaluations, k * (k - 1));
    ASSERT_EQ(a.ranking.size(), b.ranking.size());
    for (std::size_t r = 0; r < a.ranking.size(); ++r) {
      ASSERT_EQ(a.ranking[r].concept_id, b.ranking[r].concept_id);
      ASSERT_EQ(a.ranking[r].wins, b.ranking[r].wins);
      ASSERT_EQ(a.ranking[r].draws, b.ranking[r].draws);
    }
  }
}
