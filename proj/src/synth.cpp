#include "rtcav/synth.hpp"

#include <cmath>

#include "rtcav/errors.hpp"
#include "rtcav/fsutil.hpp"

namespace rtcav {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (bands == 0 || blob_band >= bands) throw InvalidConfig("blob_band must index an existing band");
  if (cell < patch_size) throw InvalidConfig("cell spacing must be at least the patch size");
  if (extent < 2 * cell) throw InvalidConfig("extent too small for the site grid");
  const std::size_t cells = (extent / cell) * (extent / cell);
  if (n_presence + n_absence + n_planted > cells)
    throw InvalidConfig("site grid has " + std::to_string(cells) + " cells, too few for the requested sites");
  if (patch_size == 0 || resize == 0) throw InvalidConfig("patch_size and resize must be >= 1");
}

namespace {

ManifestRow site_row(const SynthConfig& cfg, const std::string& id, PixelCoord p, int label) {
  return {id, cfg.origin_easting + (static_cast<double>(p.col) + 0.5) * cfg.pixel_size,
          cfg.origin_northing - (static_cast<double>(p.row) + 0.5) * cfg.pixel_size, label};
}

std::string padded(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

}  // namespace

SynthFixture make_synthetic_fixture(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x5EED));
  const std::size_t n = cfg.extent;
  std::vector<double> data(cfg.bands * n * n);

  // Per-band offset, a gentle east-west trend and white noise. A few pixels
  // fall below zero, as nodata-like artefacts do in real covariates.
  for (std::size_t b = 0; b < cfg.bands; ++b) {
    const double offset = 1.0 + 0.1 * static_cast<double>(b);
    const double phase = rng.uniform() * 6.283185307179586;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double trend = 0.2 * std::sin(phase + 6.283185307179586 * static_cast<double>(c) / static_cast<double>(n));
        data[(b * n + r) * n + c] = offset + trend + rng.normal(0.0, cfg.noise_std);
      }
  }

  // Traps and planted sites occupy distinct grid cells so that no patch
  // sees a neighbouring blob.
  const std::size_t per_side = n / cfg.cell;
  std::vector<std::size_t> cells(per_side * per_side);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = cells.size() - 1; i > 0; --i) std::swap(cells[i], cells[rng.index(i + 1)]);
  const std::int64_t jitter = static_cast<std::int64_t>((cfg.cell - cfg.patch_size) / 2);
  auto cell_site = [&](std::size_t cell) {
    auto j = [&] { return jitter > 0 ? static_cast<std::int64_t>(rng.index(2 * jitter + 1)) - jitter : 0; };
    const auto row = static_cast<std::int64_t>((cell / per_side) * cfg.cell + cfg.cell / 2) + j();
    const auto col = static_cast<std::int64_t>((cell % per_side) * cfg.cell + cfg.cell / 2) + j();
    return PixelCoord{row, col};
  };

  SynthFixture fx;
  std::size_t next = 0;
  for (std::size_t i = 0; i < cfg.n_presence; ++i) {
    const auto p = cell_site(cells[next++]);
    fx.traps.push_back(site_row(cfg, "trap" + padded(fx.traps.size()), p, 1));
    fx.blob_centers.push_back(p);
  }
  for (std::size_t i = 0; i < cfg.n_absence; ++i)
    fx.traps.push_back(site_row(cfg, "trap" + padded(fx.traps.size()), cell_site(cells[next++]), 0));
  for (std::size_t i = 0; i < cfg.n_planted; ++i) {
    const auto p = cell_site(cells[next++]);
    fx.planted.push_back(site_row(cfg, "blob" + padded(i), p, -1));
    fx.blob_centers.push_back(p);
  }

  const double reach = 3.0 * cfg.blob_sigma;
  const auto radius = static_cast<std::int64_t>(std::ceil(reach));
  for (const auto& bc : fx.blob_centers)
    for (std::int64_t dr = -radius; dr <= radius; ++dr)
      for (std::int64_t dc = -radius; dc <= radius; ++dc) {
        const std::int64_t r = bc.row + dr, c = bc.col + dc;
        if (r < 0 || c < 0 || r >= static_cast<std::int64_t>(n) || c >= static_cast<std::int64_t>(n)) continue;
        const double d2 = static_cast<double>(dr * dr + dc * dc);
        data[(cfg.blob_band * n + static_cast<std::size_t>(r)) * n + static_cast<std::size_t>(c)] +=
            cfg.blob_amplitude * std::exp(-d2 / (2.0 * cfg.blob_sigma * cfg.blob_sigma));
      }

  // Blob-free sites anywhere whose patch stays clear of every blob.
  const auto half = static_cast<std::int64_t>(cfg.patch_size / 2);
  const auto clearance = half + radius + 1;
  auto free_site = [&] {
    for (;;) {
      const PixelCoord p{half + static_cast<std::int64_t>(rng.index(n - 2 * static_cast<std::size_t>(half))),
                         half + static_cast<std::int64_t>(rng.index(n - 2 * static_cast<std::size_t>(half)))};
      bool clear = true;
      for (const auto& bc : fx.blob_centers)
        if (std::abs(bc.row - p.row) < clearance && std::abs(bc.col - p.col) < clearance) {
          clear = false;
          break;
        }
      if (clear) return p;
    }
  };
  for (std::size_t i = 0; i < cfg.n_control; ++i) fx.control.push_back(site_row(cfg, "ctrl" + padded(i), free_site(), -1));
  for (std::size_t i = 0; i < cfg.n_random; ++i) fx.random.push_back(site_row(cfg, "rand" + padded(i), free_site(), -1));

  fx.raster.data = Tensor({cfg.bands, n, n}, std::move(data));
  for (std::size_t b = 0; b < cfg.bands; ++b) fx.raster.band_names.push_back("band" + std::to_string(b + 1));
  fx.raster.pixel_size = cfg.pixel_size;
  fx.raster.origin_easting = cfg.origin_easting;
  fx.raster.origin_northing = cfg.origin_northing;
  return fx;
}

nlohmann::json synthetic_run_config(const SynthConfig& cfg) {
  return {{"seed", cfg.seed},
          {"data",
           {{"raster", "raster"},
            {"manifest", "traps.csv"},
            {"concepts", {{{"id", "blob"}, {"manifest", "concepts/blob.csv"}},
                          {{"id", "control"}, {"manifest", "concepts/control.csv"}}}},
            {"random", "random.csv"}}},
          {"preprocess",
           {{"patch_size", cfg.patch_size}, {"resize", cfg.resize}, {"test_frac", 0.2}, {"val_frac", 0.2},
            {"split", "longitudinal"}}},
          {"model",
           {{"network", {{"in_channels", cfg.bands}}},
            {"train", {{"max_epochs", 30}, {"patience", 5}, {"batch_size", 8}, {"lr", 2e-3}}}}},
          {"tcav", {{"iterations", 500}, {"random_sample_size", 20}, {"threshold", 0.0}, {"classes", {1, 0}}}},
          {"map", {{"window", cfg.patch_size}, {"stride", cfg.patch_size / 2}, {"aggregation", "average"}}},
          {"sanity", {{"concepts", {"blob"}}, {"min_auc", 0.7}}},
          {"outputs", {{"dir", "out"}}}};
}

fs::path write_synthetic_fixture(const SynthFixture& fx, const SynthConfig& cfg, const fs::path& dir) {
  write_raster(fx.raster, dir / "raster");
  write_manifest(fx.traps, dir / "traps.csv");
  write_manifest(fx.planted, dir / "concepts" / "blob.csv");
  write_manifest(fx.control, dir / "concepts" / "control.csv");
  write_manifest(fx.random, dir / "random.csv");
  const fs::path config = dir / "config.json";
  write_text_atomic(config, synthetic_run_config(cfg).dump(2) + "\n");
  return config;
}

}  // namespace rtcav
