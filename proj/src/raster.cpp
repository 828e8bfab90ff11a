#include "rtcav/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rtcav/fsutil.hpp"
#include "rtcav/text.hpp"

namespace rtcav {

namespace fs = std::filesystem;

PixelCoord MultibandRaster::to_pixel(double easting, double northing) const {
  return {static_cast<std::int64_t>(std::floor((origin_northing - northing) / pixel_size)),
          static_cast<std::int64_t>(std::floor((easting - origin_easting) / pixel_size))};
}

void MultibandRaster::validate() const {
  if (data.rank() != 3) throw ShapeMismatch("raster data must be [bands, height, width]");
  if (bands() != band_names.size())
    throw ShapeMismatch("raster has " + std::to_string(bands()) + " bands but " +
                        std::to_string(band_names.size()) + " band names");
  if (!(pixel_size > 0)) throw InvalidConfig("pixel_size must be positive");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "unassigned";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return Split::unassigned;
}

void SampleSet::validate() const {
  const auto n = patches.size();
  if (ids.size() != n || labels.size() != n || eastings.size() != n || splits.size() != n)
    throw ShapeMismatch("sample set lists have unequal lengths");
  for (int l : labels)
    if (l != 0 && l != 1) throw InvalidLabel("sample label must be 0 or 1, got " + std::to_string(l));
}

void SampleSet::push_back(std::string id, Patch patch, int label, double easting) {
  ids.push_back(std::move(id));
  patches.push_back(std::move(patch));
  labels.push_back(label);
  eastings.push_back(easting);
  splits.push_back(Split::unassigned);
}

SampleSet SampleSet::subset(const std::vector<std::size_t>& indices) const {
  SampleSet out;
  for (auto i : indices) {
    out.ids.push_back(ids.at(i));
    out.patches.push_back(patches.at(i));
    out.labels.push_back(labels.at(i));
    out.eastings.push_back(eastings.at(i));
    out.splits.push_back(splits.at(i));
  }
  return out;
}

SampleSet SampleSet::only(Split s) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i)
    if (splits[i] == s) idx.push_back(i);
  return subset(idx);
}

void AugmentConfig::validate() const {
  if (!(mixup_alpha > 0)) throw InvalidConfig("mixup_alpha must be positive");
  if (flip_probability < 0 || flip_probability > 1)
    throw InvalidConfig("flip_probability must lie in [0, 1]");
}

// --- extraction and preprocessing ----------------------------------------

Patch extract_patch(const MultibandRaster& raster, PixelCoord center, std::size_t size) {
  const auto h = static_cast<std::int64_t>(raster.height());
  const auto w = static_cast<std::int64_t>(raster.width());
  if (center.row < 0 || center.row >= h || center.col < 0 || center.col >= w)
    throw CenterOutOfBounds("center (" + std::to_string(center.row) + "," + std::to_string(center.col) +
                            ") outside raster " + std::to_string(h) + "x" + std::to_string(w));
  if (size == 0) throw InvalidConfig("patch size must be >= 1");
  const auto half = static_cast<std::int64_t>(size / 2);
  const auto r0 = std::max<std::int64_t>(0, center.row - half);
  const auto r1 = std::min<std::int64_t>(h, center.row - half + static_cast<std::int64_t>(size));
  const auto c0 = std::max<std::int64_t>(0, center.col - half);
  const auto c1 = std::min<std::int64_t>(w, center.col - half + static_cast<std::int64_t>(size));
  const auto ph = static_cast<std::size_t>(r1 - r0);
  const auto pw = static_cast<std::size_t>(c1 - c0);

  const auto bands = raster.bands();
  std::vector<double> data(bands * ph * pw);
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t r = 0; r < ph; ++r)
      for (std::size_t c = 0; c < pw; ++c)
        data[(b * ph + r) * pw + c] = raster.at(b, static_cast<std::size_t>(r0) + r, static_cast<std::size_t>(c0) + c);
  return {Tensor({bands, ph, pw}, std::move(data), DType::f64), center, size};
}

Patch clip_nonnegative(const Patch& p) {
  std::vector<double> data = p.data.values();
  for (auto& v : data) v = std::max(v, 0.0);
  return {Tensor(p.data.shape(), std::move(data), p.data.dtype(), p.data.name()), p.center, p.nominal_size};
}

Patch minmax_normalize(const Patch& p) {
  std::vector<double> data = p.data.values();
  const std::size_t plane = p.height() * p.width();
  for (std::size_t b = 0; b < p.bands(); ++b) {
    auto first = data.begin() + static_cast<std::ptrdiff_t>(b * plane);
    auto last = first + static_cast<std::ptrdiff_t>(plane);
    const auto [mn, mx] = std::minmax_element(first, last);
    const double lo = *mn, range = *mx - *mn;
    if (range > 0) {
      std::for_each(first, last, [&](double& v) { v = std::clamp((v - lo) / range, 0.0, 1.0); });
    } else {
      std::fill(first, last, 0.0);
    }
  }
  return {Tensor(p.data.shape(), std::move(data), p.data.dtype(), p.data.name()), p.center, p.nominal_size};
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    taps[i] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& bands, std::size_t target_h, std::size_t target_w) {
  if (bands.rank() != 3) throw ShapeMismatch("resize expects [bands, h, w]");
  if (target_h == 0 || target_w == 0) throw InvalidConfig("resize target must be >= 1");
  const std::size_t nb = bands.dim(0), h = bands.dim(1), w = bands.dim(2);
  const auto ty = bilinear_taps(h, target_h);
  const auto tx = bilinear_taps(w, target_w);
  const auto& src = bands.values();
  std::vector<double> out(nb * target_h * target_w);
  for (std::size_t b = 0; b < nb; ++b) {
    const double* plane = src.data() + b * h * w;
    for (std::size_t y = 0; y < target_h; ++y) {
      const auto& [y0, y1, fy] = ty[y];
      for (std::size_t x = 0; x < target_w; ++x) {
        const auto& [x0, x1, fx] = tx[x];
        const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
        const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
        out[(b * target_h + y) * target_w + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return Tensor({nb, target_h, target_w}, std::move(out), bands.dtype(), bands.name());
}

Patch resize_bilinear(const Patch& p, std::size_t target) {
  return {resize_bilinear(p.data, target, target), p.center, p.nominal_size};
}

Patch preprocess_patch(const Patch& p, std::size_t target) {
  return resize_bilinear(minmax_normalize(clip_nonnegative(p)), target);
}

// --- splits -----------------------------------------------------------------

namespace {

SplitResult assign_in_order(const SampleSet& s, const std::vector<std::size_t>& order, double test_frac,
                            double val_frac) {
  if (!(test_frac > 0 && test_frac < 1 && val_frac > 0 && val_frac < 1 && test_frac + val_frac < 1))
    throw InvalidConfig("split fractions must lie in (0,1) and sum below 1");
  const std::size_t n = s.size();
  const auto n_test = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(test_frac * static_cast<double>(n))));
  const auto n_val =
      std::min<std::size_t>(n - n_test, static_cast<std::size_t>(std::ceil(val_frac * static_cast<double>(n))));
  SplitResult res{s, {}};
  for (std::size_t k = 0; k < n; ++k)
    res.samples.splits[order[k]] = k < n_test ? Split::test : (k < n_test + n_val ? Split::val : Split::train);
  res.summary = summarize_splits(res.samples);
  return res;
}

}  // namespace

SplitResult longitudinal_split(const SampleSet& s, double test_frac, double val_frac) {
  s.validate();
  for (double e : s.eastings)
    if (!std::isfinite(e)) throw MissingCoordinates("sample without a finite easting");
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.eastings[a] > s.eastings[b]; });
  return assign_in_order(s, order, test_frac, val_frac);
}

SplitResult random_split(const SampleSet& s, double test_frac, double val_frac, std::uint64_t seed) {
  s.validate();
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return assign_in_order(s, order, test_frac, val_frac);
}

SplitSummary summarize_splits(const SampleSet& s) {
  SplitSummary sum;
  for (std::size_t i = 0; i < s.size(); ++i) {
    SplitSummary::Entry* e = s.splits[i] == Split::train ? &sum.train
                             : s.splits[i] == Split::val ? &sum.val
                             : s.splits[i] == Split::test ? &sum.test
                                                          : nullptr;
    if (!e) continue;
    ++e->count;
    e->presences += s.labels[i] == 1 ? 1 : 0;
  }
  for (auto* e : {&sum.train, &sum.val, &sum.test})
    e->presence_rate = e->count ? static_cast<double>(e->presences) / static_cast<double>(e->count) : 0.0;
  return sum;
}

// --- augmentation -----------------------------------------------------------

Tensor flip_horizontal(const Tensor& chw) {
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  std::vector<double> out(chw.size());
  for (std::size_t b = 0; b < c; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(b * h + y) * w + x] = chw[(b * h + y) * w + (w - 1 - x)];
  return Tensor(chw.shape(), std::move(out), chw.dtype(), chw.name());
}

Tensor flip_vertical(const Tensor& chw) {
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  std::vector<double> out(chw.size());
  for (std::size_t b = 0; b < c; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(b * h + y) * w + x] = chw[(b * h + (h - 1 - y)) * w + x];
  return Tensor(chw.shape(), std::move(out), chw.dtype(), chw.name());
}

Tensor rotate_quarter(const Tensor& chw, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return chw;
  if (k == 2) return flip_vertical(flip_horizontal(chw));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h != w) throw NonSquareRotation("quarter-turn rotation needs a square patch, got " + shape_str(chw.shape()));
  const std::size_t n = h;
  std::vector<double> out(chw.size());
  for (std::size_t b = 0; b < c; ++b)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        // counter-clockwise: out(y, x) = in(x, n-1-y); clockwise for k == 3
        const std::size_t sy = k == 1 ? x : n - 1 - x;
        const std::size_t sx = k == 1 ? n - 1 - y : y;
        out[(b * n + y) * n + x] = chw[(b * n + sy) * n + sx];
      }
  return Tensor(chw.shape(), std::move(out), chw.dtype(), chw.name());
}

Patch augment_flip_rotate(const Patch& p, const AugmentConfig& cfg, Rng& rng) {
  // Draws happen unconditionally so the stream position does not depend on cfg.
  const bool fh = rng.bernoulli(cfg.flip_probability);
  const bool fv = rng.bernoulli(cfg.flip_probability);
  const auto pick = rng.next();
  Tensor t = p.data;
  if (cfg.flip_h && fh) t = flip_horizontal(t);
  if (cfg.flip_v && fv) t = flip_vertical(t);
  if (!cfg.rotations.empty()) {
    const int turns = cfg.rotations[pick % cfg.rotations.size()];
    if (turns % 2 != 0 && p.height() != p.width())
      throw NonSquareRotation("quarter-turn rotation needs a square patch");
    t = rotate_quarter(t, turns);
  }
  return {std::move(t), p.center, p.nominal_size};
}

LabeledPatch mix_pair(const LabeledPatch& a, const LabeledPatch& b, double lambda) {
  if (a.data.shape() != b.data.shape() || a.label.size() != b.label.size())
    throw ShapeMismatch("mixup partners differ in shape");
  std::vector<double> data(a.data.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = lambda * a.data[i] + (1 - lambda) * b.data[i];
  std::vector<double> label(a.label.size());
  for (std::size_t k = 0; k < label.size(); ++k) label[k] = lambda * a.label[k] + (1 - lambda) * b.label[k];
  return {Tensor(a.data.shape(), std::move(data), a.data.dtype()), std::move(label)};
}

std::vector<LabeledPatch> mixup_with(const std::vector<LabeledPatch>& batch, const std::vector<double>& lambdas,
                                     const std::vector<std::size_t>& partners) {
  if (batch.size() < 2) throw ShapeMismatch("mixup needs at least two samples");
  if (lambdas.size() != batch.size() || partners.size() != batch.size())
    throw ShapeMismatch("mixup lambdas/partners must match the batch size");
  std::vector<LabeledPatch> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(mix_pair(batch[i], batch.at(partners[i]), lambdas[i]));
  return out;
}

std::vector<LabeledPatch> mixup(const std::vector<LabeledPatch>& batch, double alpha, Rng& rng) {
  if (!(alpha > 0)) throw InvalidConfig("mixup alpha must be positive");
  if (batch.size() < 2) throw ShapeMismatch("mixup needs at least two samples");
  for (const auto& s : batch)
    if (s.data.shape() != batch[0].data.shape() || s.label.size() != batch[0].label.size())
      throw ShapeMismatch("mixup batch has inconsistent shapes");
  std::vector<std::size_t> perm(batch.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<double> lambdas(batch.size());
  for (auto& l : lambdas) l = rng.beta(alpha, alpha);
  return mixup_with(batch, lambdas, perm);
}

// --- file formats -----------------------------------------------------------

MultibandRaster read_raster(const fs::path& dir) {
  const auto meta_path = dir / "raster.json";
  if (!fs::exists(meta_path)) throw IoError("missing raster sidecar " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeader(meta_path.string() + ": " + e.what());
  }
  MultibandRaster r;
  r.pixel_size = meta.at("pixel_size").get<double>();
  const auto origin = meta.at("origin").get<std::vector<double>>();
  if (origin.size() != 2) throw MalformedHeader("raster origin must be [easting, northing]");
  r.origin_easting = origin[0];
  r.origin_northing = origin[1];
  r.band_names = meta.at("band_names").get<std::vector<std::string>>();
  if (r.band_names.empty()) throw MalformedHeader("raster has no bands");

  std::size_t h = 0, w = 0;
  std::vector<double> data;
  for (std::size_t b = 0; b < r.band_names.size(); ++b) {
    const Tensor band = read_tensor(dir / ("band_" + std::to_string(b) + ".cavt"));
    if (band.rank() != 2) throw ShapeMismatch("band " + std::to_string(b) + " must be [height, width]");
    if (b == 0) {
      h = band.dim(0);
      w = band.dim(1);
      data.reserve(r.band_names.size() * h * w);
    } else if (band.dim(0) != h || band.dim(1) != w) {
      throw ShapeMismatch("band " + std::to_string(b) + " extent differs from band 0");
    }
    data.insert(data.end(), band.values().begin(), band.values().end());
  }
  r.data = Tensor({r.band_names.size(), h, w}, std::move(data), DType::f64, "raster");
  r.validate();
  return r;
}

void write_raster(const MultibandRaster& raster, const fs::path& dir) {
  raster.validate();
  fs::create_directories(dir);
  const std::size_t h = raster.height(), w = raster.width();
  for (std::size_t b = 0; b < raster.bands(); ++b) {
    std::vector<double> band(raster.data.values().begin() + static_cast<std::ptrdiff_t>(b * h * w),
                             raster.data.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * h * w));
    write_tensor(Tensor({h, w}, std::move(band), raster.data.dtype(), raster.band_names[b]),
                 dir / ("band_" + std::to_string(b) + ".cavt"));
  }
  nlohmann::json meta = {{"pixel_size", raster.pixel_size},
                         {"origin", {raster.origin_easting, raster.origin_northing}},
                         {"band_names", raster.band_names}};
  write_text_atomic(dir / "raster.json", meta.dump(2) + "\n");
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty manifest");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected = {"id", "easting", "northing", "label"};
  if (header != expected) throw ValidationError(path.string() + ": header must be id,easting,northing,label");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    if (f[1].empty() || f[2].empty())
      throw MissingCoordinates(path.string() + ":" + std::to_string(lineno) + ": missing coordinates");
    rows.push_back({f[0], parse_double(f[1]), parse_double(f[2]), static_cast<int>(parse_int(f[3]))});
  }
  return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const fs::path& path) {
  std::ostringstream out;
  out << "id,easting,northing,label\n";
  for (const auto& r : rows)
    out << r.id << ',' << format_double(r.easting) << ',' << format_double(r.northing) << ',' << r.label << '\n';
  write_text_atomic(path, out.str());
}

SampleSet extract_samples(const MultibandRaster& raster, const std::vector<ManifestRow>& rows,
                          std::size_t patch_size) {
  SampleSet s;
  for (const auto& row : rows)
    s.push_back(row.id, extract_patch(raster, raster.to_pixel(row.easting, row.northing), patch_size), row.label,
                row.easting);
  return s;
}

Tensor stack_patches(const std::vector<Patch>& patches, DType dtype) {
  if (patches.empty()) throw EmptyInput("cannot stack an empty patch list");
  const Shape& s0 = patches[0].data.shape();
  std::vector<double> data;
  data.reserve(patches.size() * patches[0].data.size());
  for (const auto& p : patches) {
    if (p.data.shape() != s0) throw ShapeMismatch("cannot stack patches of different shapes");
    data.insert(data.end(), p.data.values().begin(), p.data.values().end());
  }
  return Tensor({patches.size(), s0[0], s0[1], s0[2]}, std::move(data), dtype);
}

std::vector<Patch> unstack_patches(const Tensor& nchw) {
  if (nchw.rank() != 4) throw ShapeMismatch("expected [n, bands, h, w]");
  const std::size_t n = nchw.dim(0), per = nchw.size() / n;
  std::vector<Patch> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d(nchw.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                          nchw.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.push_back({Tensor({nchw.dim(1), nchw.dim(2), nchw.dim(3)}, std::move(d)), {}, nchw.dim(2)});
  }
  return out;
}

}  // namespace rtcav
