#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtcav/cav.hpp"
#include "rtcav/distmap.hpp"
#include "rtcav/refnet.hpp"
#include "rtcav/train.hpp"

namespace rtcav {

// Pipeline stages; each gets its own seed derived from the root seed.
enum class Stage : std::uint64_t { prepare = 0, network_init = 1, train = 2, tcav = 3, sanity = 4 };

std::uint64_t stage_seed(std::uint64_t root, Stage stage);

struct DataSection {
  std::filesystem::path raster;    // raster directory
  std::filesystem::path manifest;  // trap manifest (id,easting,northing,label)
  // Concept id -> manifest of concept sites, in config order.
  std::vector<std::pair<std::string, std::filesystem::path>> concepts;
  std::filesystem::path random;  // manifest of random sites
};

struct PreprocessSection {
  std::size_t patch_size = 512;
  std::size_t resize = 128;
  double test_frac = 0.2;
  double val_frac = 0.2;
  std::string split = "longitudinal";  // or "random"
};

struct TcavSection {
  TcavConfig config;
  std::string tap = kDefaultTap;
  std::vector<std::string> concepts;  // empty: every data concept
  std::vector<int> classes = {1, 0};
};

struct SanitySection {
  std::vector<std::string> concepts;  // empty: every data concept
  double min_auc = 0.7;
  double test_frac = 0.2;
  double val_frac = 0.16;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  PreprocessSection preprocess;
  NetworkConfig network;
  TrainConfig train;
  TcavSection tcav;
  PredictMapConfig map;
  SanitySection sanity;
  std::filesystem::path outputs = "out";

  // Relative paths in the document are resolved against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  nlohmann::json to_json() const;

  std::vector<std::string> tcav_concepts() const;
  std::vector<std::string> sanity_concepts() const;
  const std::filesystem::path& concept_manifest(const std::string& id) const;

  // Fractions, sizes and concept references; with `check_paths` every
  // referenced file must exist.
  void validate(bool check_paths = true) const;
};

// Throws ValidationError naming the path when it is missing or unparsable.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace rtcav
