#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtcav/rng.hpp"
#include "rtcav/tensor.hpp"

namespace rtcav {

struct PixelCoord {
  std::int64_t row = 0;
  std::int64_t col = 0;
  bool operator==(const PixelCoord&) const = default;
};

// Georeferenced band stack; data is [bands, height, width].
struct MultibandRaster {
  Tensor data;
  std::vector<std::string> band_names;
  double pixel_size = 1.0;
  double origin_easting = 0.0;   // of the top-left pixel corner
  double origin_northing = 0.0;

  std::size_t bands() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }

  double at(std::size_t b, std::size_t r, std::size_t c) const {
    return data[(b * height() + r) * width() + c];
  }

  // Pixel containing a map coordinate; northing decreases with row.
  PixelCoord to_pixel(double easting, double northing) const;
  void validate() const;
};

struct Patch {
  Tensor data;  // [bands, h, w]
  PixelCoord center;
  std::size_t nominal_size = 0;

  std::size_t bands() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

enum class Split : std::uint8_t { unassigned, train, val, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

// Labeled, coordinate-tagged patch collection; all vectors are parallel.
struct SampleSet {
  std::vector<std::string> ids;
  std::vector<Patch> patches;
  std::vector<int> labels;  // 1 = Presence, 0 = Absence
  std::vector<double> eastings;
  std::vector<Split> splits;

  std::size_t size() const { return patches.size(); }
  void validate() const;
  void push_back(std::string id, Patch patch, int label, double easting);

  SampleSet subset(const std::vector<std::size_t>& indices) const;
  SampleSet only(Split s) const;
};

struct AugmentConfig {
  bool flip_h = true;
  bool flip_v = true;
  std::vector<int> rotations = {1, 2, 3};  // quarter-turns to sample from
  double flip_probability = 0.5;
  double mixup_alpha = 0.2;
  bool mixup_enabled = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitSummary {
  struct Entry {
    std::size_t count = 0;
    std::size_t presences = 0;
    double presence_rate = 0.0;
  };
  Entry train, val, test;
};

struct SplitResult {
  SampleSet samples;
  SplitSummary summary;
};

// --- extraction and preprocessing ----------------------------------------

// Window [c - size/2, c + size/2) in each axis, intersected with the raster.
Patch extract_patch(const MultibandRaster& raster, PixelCoord center, std::size_t size);

Patch clip_nonnegative(const Patch& p);

// Per band (x - min) / (max - min); a constant band maps to zeros.
Patch minmax_normalize(const Patch& p);

// Align-corners-false bilinear resampling with clamped source coordinates.
Patch resize_bilinear(const Patch& p, std::size_t target);
Tensor resize_bilinear(const Tensor& bands, std::size_t target_h, std::size_t target_w);

// clip -> minmax -> resize
Patch preprocess_patch(const Patch& p, std::size_t target);

// --- splits -----------------------------------------------------------------

// Sort by easting descending (stable); first ceil(test_frac*n) go to test,
// next ceil(val_frac*n) to val, the rest to train.
SplitResult longitudinal_split(const SampleSet& s, double test_frac, double val_frac);

// Same partition arithmetic over a seeded random permutation.
SplitResult random_split(const SampleSet& s, double test_frac, double val_frac, std::uint64_t seed);

SplitSummary summarize_splits(const SampleSet& s);

// --- augmentation -----------------------------------------------------------

Tensor flip_horizontal(const Tensor& chw);
Tensor flip_vertical(const Tensor& chw);
// Counter-clockwise by quarter_turns * 90 degrees; requires h == w unless
// the turn count is a multiple of two.
Tensor rotate_quarter(const Tensor& chw, int quarter_turns);

Patch augment_flip_rotate(const Patch& p, const AugmentConfig& cfg, Rng& rng);

struct LabeledPatch {
  Tensor data;                // [bands, h, w]
  std::vector<double> label;  // one-hot or soft
};

// x' = lambda*x_i + (1-lambda)*x_j and the same for labels.
LabeledPatch mix_pair(const LabeledPatch& a, const LabeledPatch& b, double lambda);

// For each i: lambda_i ~ Beta(alpha, alpha), partner from a random permutation.
std::vector<LabeledPatch> mixup(const std::vector<LabeledPatch>& batch, double alpha, Rng& rng);

// Deterministic core of mixup with explicit lambdas and partner indices.
std::vector<LabeledPatch> mixup_with(const std::vector<LabeledPatch>& batch,
                                     const std::vector<double>& lambdas,
                                     const std::vector<std::size_t>& partners);

// --- file formats -----------------------------------------------------------

// Directory of band_<i>.cavt ([height, width] each) plus raster.json.
MultibandRaster read_raster(const std::filesystem::path& dir);
void write_raster(const MultibandRaster& raster, const std::filesystem::path& dir);

struct ManifestRow {
  std::string id;
  double easting = 0.0;
  double northing = 0.0;
  int label = 0;
};

// CSV with header `id,easting,northing,label`.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);

// Extracts one patch per manifest row (centered on its coordinates).
SampleSet extract_samples(const MultibandRaster& raster, const std::vector<ManifestRow>& rows,
                          std::size_t patch_size);

// Stacks equally-sized patches into [n, bands, h, w].
Tensor stack_patches(const std::vector<Patch>& patches, DType dtype = DType::f64);
std::vector<Patch> unstack_patches(const Tensor& nchw);

}  // namespace rtcav
