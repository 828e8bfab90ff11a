#include <cmath>

#include <gtest/gtest.h>

#include "fixture.hpp"
#include "rtcav/distmap.hpp"
#include "rtcav/fsutil.hpp"
#include "support.hpp"

using namespace rtcav;

namespace {

template <typename F>
MultibandRaster raster_of(std::size_t h, std::size_t w, F value) {
  std::vector<double> v(7 * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = value(i);
  MultibandRaster r;
  r.data = Tensor({7, h, w}, std::move(v));
  r.band_names.assign(7, "b");
  return r;
}

MultibandRaster constant_raster(std::size_t h, std::size_t w, double v) {
  return raster_of(h, w, [v](std::size_t) { return v; });
}

ReferenceNet he_net(std::uint64_t seed) {
  NetworkConfig nc;
  nc.output_init = "he";
  nc.seed = seed;
  return ReferenceNet(nc);
}

}  // namespace

TEST(WindowCount, Arithmetic) {
  EXPECT_EQ(window_count(100, 40, 40), 3u);
  EXPECT_EQ(window_count(120, 40, 40), 3u);
  EXPECT_EQ(window_count(100, 40, 20), 4u);
  EXPECT_EQ(window_count(101, 40, 20), 5u);
  EXPECT_EQ(window_count(40, 40, 7), 1u);
}

TEST(PredictMap, ConstantRasterGivesConstantMap) {
  const auto raster = constant_raster(96, 80, 2.5);
  PredictMapConfig cfg{32, 16, 32, MapAggregation::average};
  const auto net = he_net(1);
  const auto map = predict_map(raster, net, cfg);
  EXPECT_EQ(map.probability.rows(), 96);
  EXPECT_EQ(map.probability.cols(), 80);
  // Truncated edge windows resize to the same constant input.
  EXPECT_LE(map.probability.maxCoeff() - map.probability.minCoeff(), 1e-12);
  cfg.aggregation = MapAggregation::bilinear;
  const auto bil = predict_map(raster, net, cfg);
  EXPECT_LE(bil.probability.maxCoeff() - bil.probability.minCoeff(), 1e-12);
}

TEST(PredictMap, StrideEqualsWindowTiles) {
  const auto raster = raster_of(100, 70, [](std::size_t i) { return std::sin(0.37 * static_cast<double>(i)); });
  const PredictMapConfig cfg{32, 32, 32, MapAggregation::average};
  const auto map = predict_map(raster, he_net(2), cfg);
  EXPECT_EQ(map.grid.rows(), static_cast<Eigen::Index>((100 + 31) / 32));
  EXPECT_EQ(map.grid.cols(), static_cast<Eigen::Index>((70 + 31) / 32));
  for (Eigen::Index r = 0; r < 100; ++r)
    for (Eigen::Index c = 0; c < 70; ++c) ASSERT_EQ(map.probability(r, c), map.grid(r / 32, c / 32));
}

TEST(PredictMap, ErrorsAndRange) {
  const auto raster = constant_raster(40, 40, 1.0);
  EXPECT_THROW(predict_map(raster, he_net(3), {64, 8, 32, MapAggregation::average}), WindowTooLarge);
  EXPECT_THROW(parse_aggregation("max"), InvalidConfig);
  const auto noisy = raster_of(64, 64, [](std::size_t i) { return std::cos(1.3 * static_cast<double>(i)); });
  for (auto agg : {MapAggregation::average, MapAggregation::bilinear}) {
    const auto m = predict_map(noisy, he_net(4), {32, 8, 32, agg});
    EXPECT_GE(m.probability.minCoeff(), 0.0);
    EXPECT_LE(m.probability.maxCoeff(), 1.0);
    const auto again = predict_map(noisy, he_net(4), {32, 8, 32, agg});
    EXPECT_EQ(m.probability, again.probability);
  }
}

TEST(PredictMap, WritesRasterAndSidecar) {
  TempDir dir("map");
  const auto raster = constant_raster(48, 48, 1.0);
  const auto m = predict_map(raster, he_net(5), {32, 16, 32, MapAggregation::average});
  write_distribution_map(m, raster, dir.path());
  const Tensor t = read_tensor(dir / "map.cavt");
  EXPECT_EQ(t.shape(), (Shape{48, 48}));
  EXPECT_TRUE(std::filesystem::exists(dir / "map.json"));
}

TEST(PredictMap, PlantedRegionIsHot) {
  const auto tf = make_trained_fixture(1);
  const PredictMapConfig cfg{tf.synth.patch_size, tf.synth.patch_size / 2, tf.synth.resize, MapAggregation::average};
  const auto map = predict_map(tf.fx.raster, tf.model.net, cfg);
  double inside = 0.0, outside = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (Eigen::Index r = 0; r < map.probability.rows(); ++r)
    for (Eigen::Index c = 0; c < map.probability.cols(); ++c) {
      double nearest = 1e9;
      for (const auto& b : tf.fx.blob_centers)
        nearest = std::min(nearest, std::hypot(static_cast<double>(b.row - r), static_cast<double>(b.col - c)));
      if (nearest <= 2.0 * tf.synth.blob_sigma) {
        inside += map.probability(r, c);
        ++n_in;
      } else if (nearest > static_cast<double>(tf.synth.patch_size)) {
        outside += map.probability(r, c);
        ++n_out;
      }
    }
  ASSERT_GT(n_in, 0u);
  ASSERT_GT(n_out, 0u);
  inside /= static_cast<double>(n_in);
  outside /= static_cast<double>(n_out);
  EXPECT_GE(inside, 2.0 * outside) << "inside " << inside << " outside " << outside;
}
