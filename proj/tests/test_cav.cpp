#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "rtcav/bundle.hpp"
#include "rtcav/cav.hpp"
#include "rtcav/fsutil.hpp"
#include "support.hpp"

using namespace rtcav;

namespace {

Matrix random_matrix(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c, double mean = 0.0) {
  std::normal_distribution<double> nd(mean, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(gen);
  return m;
}

Matrix normalized_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

// Student t density and two-sided tail by composite Simpson quadrature.
double t_density(double x, double nu) {
  return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * M_PI) *
         std::pow(1 + x * x / nu, -(nu + 1) / 2);
}

double two_sided_p_quadrature(double t, double nu) {
  const int n = 200000;
  const double a = 0.0, b = std::abs(t), h = (b - a) / n;
  double s = t_density(a, nu) + t_density(b, nu);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * t_density(a + i * h, nu);
  return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST(Cav, AxisCase) {
  const Cav c = compute_cav(Matrix{{1, 0}, {1, 0}}, Matrix{{0, 0}, {0, 0}}, "c");
  EXPECT_EQ(c.direction, Vector({{1.0, 0.0}}));
  EXPECT_EQ(c.concept_id, "c");
  EXPECT_EQ(c.tap_id, "concat");
}

TEST(Cav, WorkedExample) {
  const Cav c = compute_cav(Matrix{{2, 1}, {0, 1}}, Matrix{{0, 0}, {0, -1}});
  EXPECT_NEAR(c.direction[0], 1.0 / std::sqrt(3.25), 1e-15);
  EXPECT_NEAR(c.direction[1], 1.5 / std::sqrt(3.25), 1e-15);
  EXPECT_NEAR(c.direction[0], 0.5547, 1e-4);
  EXPECT_NEAR(c.direction[1], 0.8321, 1e-4);
  EXPECT_EQ(c.concept_mean, Vector({{1.0, 1.0}}));
  EXPECT_EQ(c.random_mean, Vector({{0.0, -0.5}}));
}

TEST(Cav, Errors) {
  EXPECT_THROW(compute_cav(Matrix{{1, 2}}, Matrix{{1, 2}}), DegenerateCav);
  EXPECT_THROW(compute_cav(Matrix(0, 2), Matrix{{1, 2}}), EmptyMatrix);
  EXPECT_THROW(compute_cav(Matrix{{1, 2}}, Matrix{{1, 2, 3}}), LengthMismatch);
}

TEST(Sensitivity, Examples) {
  const Cav c = compute_cav(Matrix{{3, 4}}, Matrix{{0, 0}});
  EXPECT_NEAR(sensitivity(c.direction, c), 1.0, 1e-15);
  EXPECT_EQ(sensitivity(Vector{{-0.8, 0.6}}, c), 0.0);
  EXPECT_THROW(sensitivities(Matrix{{1, 0, 0}}, c.direction), LengthMismatch);
}

TEST(Sensitivity, MatchesNaiveDot) {
  std::mt19937_64 gen(1);
  const Matrix g = normalized_rows(random_matrix(gen, 5, 16));
  const Vector v = random_matrix(gen, 16, 1).col(0).normalized();
  const auto s = sensitivities(g, v);
  for (Eigen::Index i = 0; i < 5; ++i) {
    double naive = 0.0;
    for (Eigen::Index j = 0; j < 16; ++j) naive += g(i, j) * v[j];
    EXPECT_EQ(s[static_cast<std::size_t>(i)], naive);
  }
}

TEST(TcavScore, Examples) {
  const std::vector<double> a = {0.1, -0.2, 0.3};
  EXPECT_DOUBLE_EQ(tcav_score(a, 0.0), 2.0 / 3.0);
  const std::vector<double> b = {0.04, 0.06, -0.1};
  EXPECT_DOUBLE_EQ(tcav_score(b, 0.05), 1.0 / 3.0);
  const std::vector<double> z = {0.0, 0.0};
  EXPECT_EQ(tcav_score(z, 0.0), 0.0);
  EXPECT_THROW(tcav_score(std::vector<double>{}, 0.0), EmptyInput);
}

TEST(TTest, AllHalf) {
  const std::vector<double> s = {0.5, 0.5, 0.5};
  const auto r = t_test_vs_half(s);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_TRUE(r.degenerate);
}

TEST(TTest, WorkedCaseAgainstClosedForm) {
  const std::vector<double> s = {0.6, 0.7, 0.8};
  const auto r = t_test_vs_half(s);
  EXPECT_NEAR(r.t, 3.4641, 1e-4);
  EXPECT_EQ(r.dof, 2u);
  // dof 2: P(|T| > t) = 1 - t / sqrt(t^2 + 2)
  EXPECT_NEAR(r.p_value, 1.0 - r.t / std::sqrt(r.t * r.t + 2.0), 1e-12);
  EXPECT_NEAR(r.p_value, 0.0742, 1e-3);
}

TEST(TTest, AgreesWithQuadratureOracle) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.2, 0.9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(3 + gen() % 20);
    for (auto& x : s) x = u(gen);
    const auto r = t_test_vs_half(s);
    EXPECT_NEAR(r.p_value, two_sided_p_quadrature(r.t, static_cast<double>(r.dof)), 1e-8);
  }
}

TEST(TTest, DegenerateAndTooFew) {
  const std::vector<double> s = {0.9, 0.9};
  const auto r = t_test_vs_half(s);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 0.0);
  EXPECT_THROW(t_test_vs_half(std::vector<double>{0.7}), TooFewSamples);
}

TEST(Bootstrap, SampleWithoutReplacementWhenPoolIsLarge) {
  const auto rows = bootstrap_sample(50, 20, 7, 3);
  std::vector<std::size_t> sorted = rows;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (auto r : rows) EXPECT_LT(r, 50u);
  EXPECT_EQ(rows, bootstrap_sample(50, 20, 7, 3));
  EXPECT_NE(rows, bootstrap_sample(50, 20, 7, 4));
}

TEST(Bootstrap, SampleWithReplacementWhenPoolIsSmall) {
  const auto rows = bootstrap_sample(3, 40, 1, 0);
  EXPECT_EQ(rows.size(), 40u);
  for (auto r : rows) EXPECT_LT(r, 3u);
}

TEST(Bootstrap, AlignedGradientsScoreOne) {
  // Random rows sit on the negative first axis, concepts on the positive one,
  // so every iteration's CAV is e1.
  Matrix concepts = Matrix::Zero(4, 3), pool = Matrix::Zero(10, 3);
  concepts.col(0).setConstant(2.0);
  for (Eigen::Index i = 0; i < 10; ++i) pool(i, 0) = -1.0 - static_cast<double>(i);
  Matrix grads = Matrix::Zero(5, 3);
  grads.col(0).setOnes();
  TcavConfig cfg;
  cfg.iterations = 30;
  cfg.random_sample_size = 4;
  const auto r = bootstrap_tcav(concepts, pool, grads, cfg, "c", 1);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 0.0);
  EXPECT_EQ(r.scores.size(), 30u);
}

TEST(Bootstrap, SingleIterationHasUndefinedP) {
  std::mt19937_64 gen(3);
  TcavConfig cfg;
  cfg.iterations = 1;
  cfg.random_sample_size = 5;
  const auto r = bootstrap_tcav(random_matrix(gen, 4, 3, 1.0), random_matrix(gen, 9, 3), random_matrix(gen, 6, 3), cfg);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_TRUE(r.p_undefined);
  EXPECT_TRUE(std::isnan(r.p_value));
}

TEST(Bootstrap, DegenerateIterationsAreSkipped) {
  // Every random row equals the concept mean except row 0, so only draws
  // that include row 0 yield a CAV.
  Matrix concepts{{1.0, 1.0}};
  Matrix pool = Matrix::Ones(6, 2);
  pool(0, 0) = 0.0;
  TcavConfig cfg;
  cfg.iterations = 40;
  cfg.random_sample_size = 1;
  const auto r = bootstrap_tcav(concepts, pool, Matrix{{1.0, 0.0}}, cfg, "c", 0, 2);
  EXPECT_GT(r.n_skipped, 0u);
  EXPECT_EQ(r.n_skipped + r.scores.size(), 40u);
  EXPECT_EQ(r.n_excluded, 2u);

  Matrix same = Matrix::Ones(6, 2);
  EXPECT_THROW(bootstrap_tcav(concepts, same, Matrix{{1.0, 0.0}}, cfg), DegenerateCav);
}

TEST(Bootstrap, InputErrors) {
  TcavConfig cfg;
  cfg.iterations = 2;
  EXPECT_THROW(bootstrap_tcav(Matrix::Ones(2, 2), Matrix(0, 2), Matrix::Ones(1, 2), cfg), EmptyMatrix);
  EXPECT_THROW(bootstrap_tcav(Matrix::Ones(2, 2), Matrix::Ones(2, 2), Matrix(0, 2), cfg), EmptyInput);
  EXPECT_THROW(bootstrap_tcav(Matrix::Ones(2, 2), Matrix::Ones(2, 3), Matrix::Ones(1, 2), cfg), LengthMismatch);
  cfg.iterations = 0;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
}

TEST(Bootstrap, ResultJsonRoundTrip) {
  std::mt19937_64 gen(4);
  TcavConfig cfg;
  cfg.iterations = 12;
  cfg.random_sample_size = 3;
  const auto r = bootstrap_tcav(random_matrix(gen, 4, 3, 1.0), random_matrix(gen, 9, 3), random_matrix(gen, 6, 3), cfg,
                                "wood", 1, 1);
  const auto back = TcavResult::from_json(r.to_json());
  EXPECT_EQ(back.scores, r.scores);
  EXPECT_EQ(back.mean, r.mean);
  EXPECT_EQ(back.stddev, r.stddev);
  EXPECT_EQ(back.concept_id, "wood");
  EXPECT_EQ(back.n_excluded, 1u);
  EXPECT_EQ(back.config.iterations, 12u);
}

TEST(Bundle, ExportShapesAndRoundTrip) {
  TempDir dir("bundle");
  NetworkConfig nc;
  nc.output_init = "he";
  const ReferenceNet net(nc);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(3 * 7 * 32 * 32);
  for (auto& x : v) x = u(gen);
  const Tensor batch({3, 7, 32, 32}, v);
  const auto b = export_activation_bundle(net, batch, {"a", "b", "c"}, {1, 0, 1}, {1, 0});
  EXPECT_EQ(b.activations.rows(), 3);
  EXPECT_EQ(b.activations.cols(), 48);
  ASSERT_EQ(b.gradients.size(), 2u);
  EXPECT_EQ(b.gradients[0].class_id, 1);
  for (const auto& g : b.gradients)
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(g.rows.row(i).norm(), 1.0, 1e-9);

  write_bundle(b, dir / "x");
  const auto back = read_bundle(dir / "x");
  EXPECT_EQ(back.activations, b.activations);
  EXPECT_EQ(back.gradients_for(0).rows, b.gradients_for(0).rows);
  EXPECT_EQ(back.sample_ids, b.sample_ids);
  EXPECT_EQ(back.labels, b.labels);
  EXPECT_THROW(back.gradients_for(2), InvalidConfig);

  const auto sel = back.select_gradients(1, 1);
  EXPECT_EQ(sel.ids, (std::vector<std::string>{"a", "c"}));

  write_bundle(export_activation_bundle(net, batch, {"a", "b", "c"}, {1, 0, 1}, {1, 0}), dir / "y");
  for (const char* f : {"activations.cavt", "gradients_class0.cavt", "gradients_class1.cavt", "bundle.json"})
    EXPECT_EQ(read_file_bytes(dir / "x" / f), read_file_bytes(dir / "y" / f)) << f;
}

TEST(Bundle, ZeroGradientsAreExcluded) {
  const ReferenceNet net(NetworkConfig{});  // zero output layer: every gradient vanishes
  const Tensor batch({2, 7, 32, 32}, std::vector<double>(2 * 7 * 32 * 32, 0.5));
  const auto b = export_activation_bundle(net, batch, {"a", "b"}, {0, 1}, {0});
  EXPECT_EQ(b.gradients[0].excluded, (std::vector<bool>{true, true}));
  const auto sel = b.select_gradients(0, std::nullopt);
  EXPECT_EQ(sel.rows.rows(), 0);
  EXPECT_EQ(sel.n_excluded, 2u);
}

// Randomized properties.

TEST(CavProperties, ScaleInvariance) {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(gen() % 10);
    const Matrix c = random_matrix(gen, 3, m, 0.5), r = random_matrix(gen, 5, m);
    const Matrix g = normalized_rows(random_matrix(gen, 8, m));
    const double k = scale(gen);
    const Cav a = compute_cav(c, r), b = compute_cav(c * k, r * k);
    ASSERT_LE((a.direction - b.direction).cwiseAbs().maxCoeff(), 1e-12);
    const auto sa = sensitivities(g, a.direction), sb = sensitivities(g, b.direction);
    for (std::size_t i = 0; i < sa.size(); ++i) ASSERT_NEAR(sa[i], sb[i], 1e-12);
    ASSERT_EQ(tcav_score(sa, 0.0), tcav_score(sb, 0.0));
  }
}

TEST(CavProperties, NegationAntisymmetry) {
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(gen() % 10);
    const Matrix g = normalized_rows(random_matrix(gen, 1 + static_cast<Eigen::Index>(gen() % 30), m));
    const Vector v = random_matrix(gen, m, 1).col(0).normalized();
    const auto s = sensitivities(g, v), sn = sensitivities(g, Vector(-v));
    if (std::find(s.begin(), s.end(), 0.0) != s.end()) continue;
    ASSERT_DOUBLE_EQ(tcav_score(sn, 0.0), 1.0 - tcav_score(s, 0.0));
  }
}

TEST(CavProperties, ThresholdMonotonicity) {
  std::mt19937_64 gen(43);
  std::uniform_real_distribution<double> u(-1.0, 1.0), t(0.0, 0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(1 + gen() % 50);
    for (auto& x : s) x = u(gen);
    const double t1 = t(gen), t2 = t1 + t(gen);
    ASSERT_GE(tcav_score(s, t1), tcav_score(s, t2));
    ASSERT_GE(tcav_score(s, 0.0), tcav_score(s, 0.05));
  }
}

TEST(CavProperties, GradientNormalizationInvariantAtZero) {
  std::mt19937_64 gen(44);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(gen() % 10);
    Matrix raw = random_matrix(gen, 1 + static_cast<Eigen::Index>(gen() % 20), m);
    for (Eigen::Index i = 0; i < raw.rows(); ++i) raw.row(i) *= scale(gen);
    const Vector v = random_matrix(gen, m, 1).col(0).normalized();
    ASSERT_EQ(tcav_score(sensitivities(raw, v), 0.0), tcav_score(sensitivities(normalized_rows(raw), v), 0.0));
  }
}

TEST(CavProperties, BootstrapDeterministicAndConsistent) {
  std::mt19937_64 gen(45);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(gen() % 6);
    const Matrix c = random_matrix(gen, 3, m, 0.3), pool = random_matrix(gen, 12, m);
    const Matrix g = normalized_rows(random_matrix(gen, 7, m));
    TcavConfig cfg;
    cfg.iterations = 2 + gen() % 8;
    cfg.random_sample_size = 1 + gen() % 15;
    cfg.seed = gen();
    const auto a = bootstrap_tcav(c, pool, g, cfg), b = bootstrap_tcav(c, pool, g, cfg);
    ASSERT_EQ(a.scores, b.scores);
    ASSERT_EQ(a.mean, b.mean);
    const double n = static_cast<double>(a.scores.size());
    long double mean = 0;
    for (double s : a.scores) {
      ASSERT_TRUE(s >= 0.0 && s <= 1.0);
      mean += s;
    }
    mean /= n;
    long double ss = 0;
    for (double s : a.scores) ss += (s - mean) * (s - mean);
    ASSERT_NEAR(a.mean, static_cast<double>(mean), 1e-12);
    ASSERT_NEAR(a.stddev, std::sqrt(static_cast<double>(ss) / (n - 1)), 1e-12);
  }
}
