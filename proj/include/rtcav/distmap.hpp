#pragma once

#include <filesystem>
#include <string>

#include "rtcav/raster.hpp"
#include "rtcav/refnet.hpp"

namespace rtcav {

enum class MapAggregation { average, bilinear };

struct PredictMapConfig {
  std::size_t window = 512;
  std::size_t stride = 256;
  std::size_t input_size = 128;  // windows are preprocessed to this extent
  MapAggregation aggregation = MapAggregation::average;
};

MapAggregation parse_aggregation(const std::string& s);
const char* aggregation_name(MapAggregation a);

struct DistributionMap {
  Matrix probability;  // [height, width], class-1 probability per pixel
  Matrix grid;         // [rows, cols], one probability per window
  std::size_t window = 0;
  std::size_t stride = 0;
  MapAggregation aggregation = MapAggregation::average;
};

// Slides a window with top-left corners at multiples of `stride` (the last
// row/column of windows may be truncated by the raster edge), scores each
// window with the class-1 softmax, and turns the grid into a per-pixel map
// by averaging the windows covering each pixel or by bilinear upsampling.
DistributionMap predict_map(const MultibandRaster& raster, const ReferenceNet& net, const PredictMapConfig& cfg);

std::size_t window_count(std::size_t extent, std::size_t window, std::size_t stride);

// map.cavt ([height, width]), grid.cavt and map.json with the georeference.
void write_distribution_map(const DistributionMap& map, const MultibandRaster& raster, const std::filesystem::path& dir);

}  // namespace rtcav
