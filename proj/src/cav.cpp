#include "rtcav/cav.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "rtcav/parallel.hpp"

namespace rtcav {

Cav compute_cav(const Eigen::Ref<const Matrix>& concept_acts, const Eigen::Ref<const Matrix>& random_acts,
                std::string concept_id, std::string tap_id) {
  if (concept_acts.rows() == 0 || random_acts.rows() == 0)
    throw EmptyMatrix("CAV needs at least one concept and one random activation");
  if (concept_acts.cols() != random_acts.cols())
    throw LengthMismatch("concept and random activations have different widths");
  Cav cav{std::move(concept_id), std::move(tap_id), {}, mean_rows(concept_acts), mean_rows(random_acts)};
  const Vector diff = cav.concept_mean - cav.random_mean;
  try {
    cav.direction = l2_normalize(diff);
  } catch (const ZeroVector&) {
    throw DegenerateCav("concept and random mean activations coincide");
  }
  return cav;
}

double sensitivity(const Eigen::Ref<const Vector>& gradient, const Cav& cav) { return dot(gradient, cav.direction); }

std::vector<double> sensitivities(const Eigen::Ref<const Matrix>& gradients, const Eigen::Ref<const Vector>& direction) {
  if (gradients.cols() != direction.size()) throw LengthMismatch("gradient width differs from direction length");
  std::vector<double> s(static_cast<std::size_t>(gradients.rows()));
  for (Eigen::Index i = 0; i < gradients.rows(); ++i) s[static_cast<std::size_t>(i)] = dot(gradients.row(i), direction);
  return s;
}

double tcav_score(std::span<const double> s, double threshold) {
  if (s.empty()) throw EmptyInput("TCAV score of an empty sensitivity list");
  const auto positive = std::count_if(s.begin(), s.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(positive) / static_cast<double>(s.size());
}

void TcavConfig::validate() const {
  if (iterations == 0) throw InvalidConfig("iterations must be >= 1");
  if (random_sample_size == 0) throw InvalidConfig("random_sample_size must be >= 1");
  if (!(threshold >= 0)) throw InvalidConfig("threshold must be >= 0");
}

void to_json(nlohmann::json& j, const TcavConfig& c) {
  j = {{"iterations", c.iterations},
       {"random_sample_size", c.random_sample_size},
       {"threshold", c.threshold},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TcavConfig& c) {
  TcavConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.random_sample_size = j.value("random_sample_size", d.random_sample_size);
  c.threshold = j.value("threshold", d.threshold);
  c.seed = j.value("seed", d.seed);
}

TTestResult t_test_vs_half(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n < 2) throw TooFewSamples("t-test needs at least two scores, got " + std::to_string(n));
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.dof = n - 1;
  if (sd == 0.0) {
    r.degenerate = true;
    if (mean == 0.5) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = mean > 0.5 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  r.t = (mean - 0.5) / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(r.dof));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json TcavResult::to_json() const {
  return {{"concept", concept_id},   {"class", class_id},
          {"config", config},        {"scores", scores},
          {"mean", mean},            {"std", stddev},
          {"t", number_or_null(t)},  {"p_value", p_undefined ? nlohmann::json(nullptr) : nlohmann::json(p_value)},
          {"p_undefined", p_undefined}, {"degenerate", degenerate},
          {"n_examples", n_examples},   {"n_excluded", n_excluded},
          {"n_skipped", n_skipped}};
}

TcavResult TcavResult::from_json(const nlohmann::json& j) {
  TcavResult r;
  r.concept_id = j.at("concept").get<std::string>();
  r.class_id = j.at("class").get<int>();
  r.config = j.value("config", TcavConfig{});
  r.scores = j.at("scores").get<std::vector<double>>();
  r.mean = j.at("mean").get<double>();
  r.stddev = j.at("std").get<double>();
  r.t = j.at("t").is_null() ? std::nan("") : j.at("t").get<double>();
  r.p_undefined = j.value("p_undefined", false);
  r.p_value = j.at("p_value").is_null() ? std::nan("") : j.at("p_value").get<double>();
  r.degenerate = j.value("degenerate", false);
  r.n_examples = j.value("n_examples", std::size_t{0});
  r.n_excluded = j.value("n_excluded", std::size_t{0});
  r.n_skipped = j.value("n_skipped", std::size_t{0});
  return r;
}

std::vector<std::size_t> bootstrap_sample(std::size_t pool_size, std::size_t sample_size, std::uint64_t seed,
                                          std::size_t iteration) {
  Rng rng(derive_seed(seed, iteration));
  std::vector<std::size_t> out(sample_size);
  if (pool_size >= sample_size) {
    std::vector<std::size_t> idx(pool_size);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t j = 0; j < sample_size; ++j) {
      std::swap(idx[j], idx[j + rng.index(pool_size - j)]);
      out[j] = idx[j];
    }
  } else {
    for (auto& o : out) o = rng.index(pool_size);
  }
  return out;
}

TcavResult bootstrap_tcav(const Eigen::Ref<const Matrix>& concept_acts, const Eigen::Ref<const Matrix>& random_pool,
                          const Eigen::Ref<const Matrix>& gradients, const TcavConfig& cfg,
                          const std::string& concept_id, int class_id, std::size_t n_excluded) {
  cfg.validate();
  if (random_pool.rows() == 0) throw EmptyMatrix("random pool is empty");
  if (gradients.rows() == 0) throw EmptyInput("no gradients to score");
  if (concept_acts.cols() != random_pool.cols() || gradients.cols() != random_pool.cols())
    throw LengthMismatch("activation and gradient widths differ");

  const auto pool = static_cast<std::size_t>(random_pool.rows());
  std::vector<double> per_iter(cfg.iterations, std::nan(""));
  parallel_for(cfg.iterations, [&](std::size_t it) {
    const auto rows = bootstrap_sample(pool, cfg.random_sample_size, cfg.seed, it);
    Matrix sample(static_cast<Eigen::Index>(rows.size()), random_pool.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      sample.row(static_cast<Eigen::Index>(r)) = random_pool.row(static_cast<Eigen::Index>(rows[r]));
    try {
      const Cav cav = compute_cav(concept_acts, sample, concept_id);
      per_iter[it] = tcav_score(sensitivities(gradients, cav.direction), cfg.threshold);
    } catch (const DegenerateCav&) {
      // left as NaN and counted below
    }
  });

  TcavResult r;
  r.concept_id = concept_id;
  r.class_id = class_id;
  r.config = cfg;
  r.n_examples = static_cast<std::size_t>(gradients.rows());
  r.n_excluded = n_excluded;
  for (double s : per_iter) {
    if (std::isnan(s)) {
      ++r.n_skipped;
    } else {
      r.scores.push_back(s);
    }
  }
  if (r.scores.empty()) throw DegenerateCav("every bootstrap iteration produced a degenerate CAV");

  const double n = static_cast<double>(r.scores.size());
  r.mean = std::accumulate(r.scores.begin(), r.scores.end(), 0.0) / n;
  if (r.scores.size() >= 2) {
    double ss = 0.0;
    for (double s : r.scores) ss += (s - r.mean) * (s - r.mean);
    r.stddev = std::sqrt(ss / (n - 1));
    const auto tt = t_test_vs_half(r.scores);
    r.t = tt.t;
    r.p_value = tt.p_value;
    r.degenerate = tt.degenerate;
  } else {
    r.stddev = 0.0;
    r.p_undefined = true;
    r.p_value = std::nan("");
    r.t = std::nan("");
  }
  return r;
}

}  // namespace rtcav
