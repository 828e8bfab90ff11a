#include "rtcav/distmap.hpp"

#include <nlohmann/json.hpp>

#include "rtcav/fsutil.hpp"
#include "rtcav/parallel.hpp"

namespace rtcav {

MapAggregation parse_aggregation(const std::string& s) {
  if (s == "average") return MapAggregation::average;
  if (s == "bilinear") return MapAggregation::bilinear;
  throw InvalidConfig("aggregation must be 'average' or 'bilinear', got '" + s + "'");
}

const char* aggregation_name(MapAggregation a) { return a == MapAggregation::average ? "average" : "bilinear"; }

std::size_t window_count(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window >= extent) return 1;
  return (extent - window + stride - 1) / stride + 1;
}

DistributionMap predict_map(const MultibandRaster& raster, const ReferenceNet& net, const PredictMapConfig& cfg) {
  const std::size_t h = raster.height(), w = raster.width();
  if (cfg.window == 0 || cfg.stride == 0) throw InvalidConfig("window and stride must be positive");
  if (cfg.window > h || cfg.window > w)
    throw WindowTooLarge("window " + std::to_string(cfg.window) + " exceeds raster " + std::to_string(h) + "x" +
                         std::to_string(w));
  const std::size_t gh = window_count(h, cfg.window, cfg.stride);
  const std::size_t gw = window_count(w, cfg.window, cfg.stride);

  DistributionMap map;
  map.window = cfg.window;
  map.stride = cfg.stride;
  map.aggregation = cfg.aggregation;
  map.grid.resize(static_cast<Eigen::Index>(gh), static_cast<Eigen::Index>(gw));

  parallel_for(gh * gw, [&](std::size_t cell) {
    const std::size_t gy = cell / gw, gx = cell % gw;
    const std::size_t r0 = gy * cfg.stride, c0 = gx * cfg.stride;
    const std::size_t ph = std::min(h, r0 + cfg.window) - r0, pw = std::min(w, c0 + cfg.window) - c0;
    std::vector<double> data(raster.bands() * ph * pw);
    for (std::size_t b = 0; b < raster.bands(); ++b)
      for (std::size_t r = 0; r < ph; ++r)
        for (std::size_t c = 0; c < pw; ++c) data[(b * ph + r) * pw + c] = raster.at(b, r0 + r, c0 + c);
    Patch p{Tensor({raster.bands(), ph, pw}, std::move(data)),
            {static_cast<std::int64_t>(r0 + ph / 2), static_cast<std::int64_t>(c0 + pw / 2)}, cfg.window};
    p = preprocess_patch(p, cfg.input_size);
    const Tensor x = p.data.reshaped({1, p.bands(), p.height(), p.width()});
    const Matrix probs = softmax_rows(net.forward(x).logits);
    map.grid(static_cast<Eigen::Index>(gy), static_cast<Eigen::Index>(gx)) = probs(0, 1);
  });

  if (cfg.aggregation == MapAggregation::average) {
    Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
    Matrix count = Matrix::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const std::size_t r0 = gy * cfg.stride, c0 = gx * cfg.stride;
        const std::size_t r1 = std::min(h, r0 + cfg.window), c1 = std::min(w, c0 + cfg.window);
        const double pr = map.grid(static_cast<Eigen::Index>(gy), static_cast<Eigen::Index>(gx));
        auto rows = Eigen::seq(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(r1 - 1));
        auto cols = Eigen::seq(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(c1 - 1));
        sum(rows, cols).array() += pr;
        count(rows, cols).array() += 1.0;
      }
    map.probability = (sum.array() / count.array().max(1.0)).matrix();
  } else {
    const Tensor g = Tensor::from_matrix(map.grid).reshaped({1, gh, gw});
    const Tensor up = resize_bilinear(g, h, w);
    map.probability = ConstMatrixMap(up.data().data(), static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  }
  map.probability = map.probability.cwiseMax(0.0).cwiseMin(1.0);
  return map;
}

void write_distribution_map(const DistributionMap& map, const MultibandRaster& raster, const std::filesystem::path& dir) {
  write_tensor(Tensor::from_matrix(map.probability, DType::f64, "probability"), dir / "map.cavt");
  write_tensor(Tensor::from_matrix(map.grid, DType::f64, "window_grid"), dir / "grid.cavt");
  nlohmann::json meta = {{"window", map.window},
                         {"stride", map.stride},
                         {"aggregation", aggregation_name(map.aggregation)},
                         {"shape", {map.probability.rows(), map.probability.cols()}},
                         {"grid_shape", {map.grid.rows(), map.grid.cols()}},
                         {"pixel_size", raster.pixel_size},
                         {"origin", {raster.origin_easting, raster.origin_northing}},
                         {"class", 1}};
  write_text_atomic(dir / "map.json", meta.dump(2) + "\n");
}

}  // namespace rtcav
