#include "rtcav/config.hpp"

#include <algorithm>

#include "rtcav/errors.hpp"
#include "rtcav/fsutil.hpp"

namespace rtcav {

namespace fs = std::filesystem;

std::uint64_t stage_seed(std::uint64_t root, Stage stage) {
  return derive_seed(root, static_cast<std::uint64_t>(stage));
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);

    const auto data = j.value("data", nlohmann::json::object());
    if (data.contains("raster")) c.data.raster = resolve(base_dir, data.at("raster").get<std::string>());
    if (data.contains("manifest")) c.data.manifest = resolve(base_dir, data.at("manifest").get<std::string>());
    if (data.contains("random")) c.data.random = resolve(base_dir, data.at("random").get<std::string>());
    if (data.contains("concepts")) {
      const auto& concepts = data.at("concepts");
      if (!concepts.is_array()) throw ValidationError("data.concepts must be a list of {id, manifest}");
      for (const auto& e : concepts)
        c.data.concepts.emplace_back(e.at("id").get<std::string>(),
                                     resolve(base_dir, e.at("manifest").get<std::string>()));
    }

    const auto pre = j.value("preprocess", nlohmann::json::object());
    c.preprocess.patch_size = pre.value("patch_size", c.preprocess.patch_size);
    c.preprocess.resize = pre.value("resize", c.preprocess.resize);
    c.preprocess.test_frac = pre.value("test_frac", c.preprocess.test_frac);
    c.preprocess.val_frac = pre.value("val_frac", c.preprocess.val_frac);
    c.preprocess.split = pre.value("split", c.preprocess.split);

    const auto model = j.value("model", nlohmann::json::object());
    c.network = model.value("network", c.network);
    c.train = model.value("train", c.train);

    const auto tcav = j.value("tcav", nlohmann::json::object());
    c.tcav.config = tcav.get<TcavConfig>();
    c.tcav.tap = tcav.value("tap", c.tcav.tap);
    c.tcav.concepts = tcav.value("concepts", c.tcav.concepts);
    c.tcav.classes = tcav.value("classes", c.tcav.classes);

    const auto map = j.value("map", nlohmann::json::object());
    c.map.window = map.value("window", c.map.window);
    c.map.stride = map.value("stride", c.map.stride);
    c.map.aggregation = parse_aggregation(map.value("aggregation", std::string(aggregation_name(c.map.aggregation))));
    c.map.input_size = c.preprocess.resize;

    const auto sanity = j.value("sanity", nlohmann::json::object());
    c.sanity.concepts = sanity.value("concepts", c.sanity.concepts);
    c.sanity.min_auc = sanity.value("min_auc", c.sanity.min_auc);
    c.sanity.test_frac = sanity.value("test_frac", c.sanity.test_frac);
    c.sanity.val_frac = sanity.value("val_frac", c.sanity.val_frac);

    const auto outputs = j.value("outputs", nlohmann::json::object());
    if (outputs.contains("dir")) c.outputs = resolve(base_dir, outputs.at("dir").get<std::string>());
    else c.outputs = resolve(base_dir, c.outputs.string());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& [id, path] : data.concepts) concepts.push_back({{"id", id}, {"manifest", path.string()}});
  nlohmann::json tcav_j = tcav.config;
  tcav_j["tap"] = tcav.tap;
  tcav_j["concepts"] = tcav.concepts;
  tcav_j["classes"] = tcav.classes;
  return {{"seed", seed},
          {"data",
           {{"raster", data.raster.string()},
            {"manifest", data.manifest.string()},
            {"concepts", concepts},
            {"random", data.random.string()}}},
          {"preprocess",
           {{"patch_size", preprocess.patch_size},
            {"resize", preprocess.resize},
            {"test_frac", preprocess.test_frac},
            {"val_frac", preprocess.val_frac},
            {"split", preprocess.split}}},
          {"model", {{"network", network}, {"train", train}}},
          {"tcav", tcav_j},
          {"map", {{"window", map.window}, {"stride", map.stride}, {"aggregation", aggregation_name(map.aggregation)}}},
          {"sanity",
           {{"concepts", sanity.concepts},
            {"min_auc", sanity.min_auc},
            {"test_frac", sanity.test_frac},
            {"val_frac", sanity.val_frac}}},
          {"outputs", {{"dir", outputs.string()}}}};
}

std::vector<std::string> RunConfig::tcav_concepts() const {
  if (!tcav.concepts.empty()) return tcav.concepts;
  std::vector<std::string> ids;
  for (const auto& e : data.concepts) ids.push_back(e.first);
  return ids;
}

std::vector<std::string> RunConfig::sanity_concepts() const {
  if (!sanity.concepts.empty()) return sanity.concepts;
  std::vector<std::string> ids;
  for (const auto& e : data.concepts) ids.push_back(e.first);
  return ids;
}

const fs::path& RunConfig::concept_manifest(const std::string& id) const {
  for (const auto& e : data.concepts)
    if (e.first == id) return e.second;
  throw ValidationError("unknown concept '" + id + "'");
}

namespace {

void check_fractions(double test, double val, const std::string& where) {
  if (!(test > 0.0 && test < 1.0) || !(val >= 0.0 && val < 1.0) || test + val >= 1.0)
    throw ValidationError(where + ": split fractions must satisfy 0 < test, 0 <= val, test + val < 1");
}

void check_exists(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ValidationError(what + " is not set");
  if (!fs::exists(p)) throw ValidationError(what + " does not exist: " + p.string());
}

}  // namespace

void RunConfig::validate(bool check_paths) const {
  check_fractions(preprocess.test_frac, preprocess.val_frac, "preprocess");
  check_fractions(sanity.test_frac, sanity.val_frac, "sanity");
  if (preprocess.patch_size == 0 || preprocess.resize == 0) throw ValidationError("patch_size and resize must be >= 1");
  if (preprocess.split != "longitudinal" && preprocess.split != "random")
    throw ValidationError("preprocess.split must be 'longitudinal' or 'random'");
  if (tcav.tap != kDefaultTap) throw ValidationError("tap '" + tcav.tap + "' is not exposed by the reference net");
  if (tcav.classes.empty()) throw ValidationError("tcav.classes is empty");
  for (int k : tcav.classes)
    if (k < 0 || static_cast<std::size_t>(k) >= network.num_classes)
      throw ValidationError("tcav class " + std::to_string(k) + " is out of range");
  if (map.window == 0 || map.stride == 0) throw ValidationError("map window and stride must be >= 1");
  if (!(sanity.min_auc >= 0.0 && sanity.min_auc <= 1.0)) throw ValidationError("sanity.min_auc must be in [0, 1]");
  std::vector<std::string> seen;
  for (const auto& [id, path] : data.concepts) {
    if (id.empty()) throw ValidationError("concept ids must be non-empty");
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) throw ValidationError("duplicate concept '" + id + "'");
    seen.push_back(id);
  }
  for (const auto& id : tcav.concepts) (void)concept_manifest(id);
  for (const auto& id : sanity.concepts) (void)concept_manifest(id);
  try {
    network.validate();
    train.validate();
    tcav.config.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (!check_paths) return;
  check_exists(data.raster, "data.raster");
  check_exists(data.manifest, "data.manifest");
  check_exists(data.random, "data.random");
  for (const auto& [id, path] : data.concepts) check_exists(path, "manifest of concept '" + id + "'");
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config file " + path.string() + " must hold a JSON object");
  return RunConfig::from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

}  // namespace rtcav
