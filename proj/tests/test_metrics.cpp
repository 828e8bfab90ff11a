#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "rtcav/errors.hpp"
#include "rtcav/metrics.hpp"

using namespace rtcav;

namespace {

double pair_counting_auc(const std::vector<double>& s, const std::vector<int>& y) {
  unsigned long long half = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 1) ++np; else ++nn;
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) half += 2;
      else if (s[i] == s[j]) half += 1;
    }
  }
  return static_cast<double>(half) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

// Draws scores from a small grid so ties are common; guarantees both classes.
void random_case(std::mt19937_64& gen, std::size_t n, std::vector<double>& s, std::vector<int>& y) {
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<double>(gen() % 25) / 24.0;
    y[i] = static_cast<int>(gen() % 2);
  }
  y[0] = 1;
  y[1] = 0;
}

std::vector<int> flipped(const std::vector<int>& y) {
  std::vector<int> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = 1 - y[i];
  return out;
}

}  // namespace

TEST(Auc, Examples) {
  const std::vector<double> s = {0.9, 0.8, 0.3, 0.1};
  EXPECT_EQ(auc(s, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auc(s, std::vector<int>{0, 0, 1, 1}), 0.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}), 0.5);
}

TEST(Auc, RandomFiftyMatchesOracle) {
  std::mt19937_64 gen(50);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(50);
  std::vector<int> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    s[i] = u(gen);
    y[i] = static_cast<int>(i % 2);
  }
  EXPECT_EQ(auc(s, y), pair_counting_auc(s, y));
}

TEST(Auc, Errors) {
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), SingleClass);
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), LengthMismatch);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), InvalidLabel);
}

TEST(Tier, Boundaries) {
  EXPECT_EQ(reliability_tier(0.6999999), ReliabilityTier::unreliable);
  EXPECT_EQ(reliability_tier(0.7), ReliabilityTier::reliable);
  EXPECT_EQ(reliability_tier(0.7999999), ReliabilityTier::reliable);
  EXPECT_EQ(reliability_tier(0.8), ReliabilityTier::excellent);
  EXPECT_STREQ(tier_name(ReliabilityTier::excellent), "excellent");
}

TEST(EvalMetrics, ComputeAndJson) {
  const std::vector<double> s = {0.9, 0.2, 0.6, 0.1};
  const std::vector<int> y = {1, 1, 0, 0};
  const auto m = EvalMetrics::compute(s, y);
  EXPECT_EQ(m.auc, 0.75);
  EXPECT_EQ(m.tier, ReliabilityTier::reliable);
  EXPECT_EQ(m.n_positive, 2u);
  EXPECT_EQ(m.n_negative, 2u);
  const auto back = EvalMetrics::from_json(m.to_json());
  EXPECT_EQ(back.auc, m.auc);
  EXPECT_EQ(back.tier, m.tier);
}

// Randomized properties.

TEST(AucProperties, MatchesPairCountingOracle) {
  std::mt19937_64 gen(61);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 1000; ++trial) {
    random_case(gen, 2 + gen() % 199, s, y);
    ASSERT_EQ(auc(s, y), pair_counting_auc(s, y));
  }
}

TEST(AucProperties, ComplementIdentity) {
  std::mt19937_64 gen(62);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 1000; ++trial) {
    random_case(gen, 2 + gen() % 199, s, y);
    ASSERT_NEAR(auc(s, y) + auc(s, flipped(y)), 1.0, 1e-15);
  }
}

TEST(AucProperties, MonotoneTransformInvariance) {
  std::mt19937_64 gen(63);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 1000; ++trial) {
    random_case(gen, 2 + gen() % 199, s, y);
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    ASSERT_EQ(auc(s, y), auc(t, y));
    const double a = auc(s, y);
    ASSERT_TRUE(a >= 0.0 && a <= 1.0);
  }
}
