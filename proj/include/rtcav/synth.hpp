#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtcav/raster.hpp"

namespace rtcav {

// Synthetic landscape with a planted concept: a bright Gaussian blob in one
// band marks every presence trap and every site of the planted concept.
// Absence traps, control-concept sites and random sites are blob-free.
struct SynthConfig {
  std::size_t extent = 960;  // raster height and width in pixels
  std::size_t bands = 7;
  std::size_t blob_band = 6;
  double blob_sigma = 3.0;
  double blob_amplitude = 3.0;
  double noise_std = 0.3;
  std::size_t cell = 48;  // site grid spacing for traps and planted sites
  std::size_t n_presence = 60;
  std::size_t n_absence = 60;
  std::size_t n_planted = 80;
  std::size_t n_control = 300;
  std::size_t n_random = 300;
  std::size_t patch_size = 40;
  std::size_t resize = 32;
  double pixel_size = 10.0;
  double origin_easting = 500000.0;
  double origin_northing = 6000000.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthFixture {
  MultibandRaster raster;
  std::vector<ManifestRow> traps;
  std::vector<ManifestRow> planted;
  std::vector<ManifestRow> control;
  std::vector<ManifestRow> random;
  std::vector<PixelCoord> blob_centers;
};

SynthFixture make_synthetic_fixture(const SynthConfig& cfg);

// Writes raster/, traps.csv, concepts/{blob,control}.csv, random.csv and a
// ready-to-run config.json; returns the config path.
std::filesystem::path write_synthetic_fixture(const SynthFixture& fx, const SynthConfig& cfg,
                                              const std::filesystem::path& dir);

// The run configuration written next to a fixture (paths relative to it).
nlohmann::json synthetic_run_config(const SynthConfig& cfg);

}  // namespace rtcav
