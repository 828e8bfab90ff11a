#include "rtcav/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rtcav/bundle.hpp"
#include "rtcav/config.hpp"
#include "rtcav/distmap.hpp"
#include "rtcav/errors.hpp"
#include "rtcav/fsutil.hpp"
#include "rtcav/metrics.hpp"
#include "rtcav/raster.hpp"
#include "rtcav/relrank.hpp"
#include "rtcav/report.hpp"
#include "rtcav/sanity.hpp"
#include "rtcav/synth.hpp"
#include "rtcav/train.hpp"

namespace rtcav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct Context {
  RunConfig cfg;
  fs::path out;
  std::ostream& err;
};

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing " + path.string() + " (run the earlier pipeline stage first)");
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// --- prepared sample sets ------------------------------------------------------

void save_set(const SampleSet& s, const fs::path& dir, const std::string& name) {
  json meta = {{"name", name}, {"n", s.size()}, {"ids", s.ids}, {"labels", s.labels}, {"eastings", s.eastings}};
  json centers = json::array();
  for (const auto& p : s.patches) centers.push_back({p.center.row, p.center.col});
  meta["centers"] = centers;
  if (s.size() > 0) {
    Tensor stack = stack_patches(s.patches, DType::f32);
    meta["shape"] = stack.shape();
    write_tensor(stack, dir / (name + ".cavt"));
  } else {
    std::error_code ec;
    fs::remove(dir / (name + ".cavt"), ec);
  }
  write_json(dir / (name + ".json"), meta);
}

SampleSet load_set(const fs::path& dir, const std::string& name) {
  const json meta = read_json(dir / (name + ".json"));
  SampleSet s;
  const auto n = meta.at("n").get<std::size_t>();
  if (n == 0) return s;
  const auto patches = unstack_patches(read_tensor(dir / (name + ".cavt")));
  const auto ids = meta.at("ids").get<std::vector<std::string>>();
  const auto labels = meta.at("labels").get<std::vector<int>>();
  const auto eastings = meta.at("eastings").get<std::vector<double>>();
  const auto centers = meta.at("centers");
  if (patches.size() != n || ids.size() != n || labels.size() != n || eastings.size() != n)
    throw ShapeMismatch("prepared set '" + name + "' is inconsistent");
  for (std::size_t i = 0; i < n; ++i) {
    Patch p = patches[i];
    p.center = {centers.at(i).at(0).get<std::int64_t>(), centers.at(i).at(1).get<std::int64_t>()};
    s.push_back(ids[i], std::move(p), labels[i], eastings[i]);
  }
  return s;
}

std::vector<Patch> prepare_patches(const SampleSet& raw, std::size_t target) {
  std::vector<Patch> out;
  out.reserve(raw.size());
  for (const auto& p : raw.patches) out.push_back(preprocess_patch(p, target));
  return out;
}

SampleSet extract_prepared(const MultibandRaster& raster, const std::vector<ManifestRow>& rows, const RunConfig& cfg) {
  SampleSet s = extract_samples(raster, rows, cfg.preprocess.patch_size);
  s.patches = prepare_patches(s, cfg.preprocess.resize);
  return s;
}

json split_entry(const SplitSummary::Entry& e) {
  return {{"count", e.count}, {"presences", e.presences}, {"presence_rate", e.presence_rate}};
}

// --- subcommands -----------------------------------------------------------------

json cmd_prepare(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  cfg.validate(true);
  const MultibandRaster raster = read_raster(cfg.data.raster);
  const fs::path dir = ctx.out / "prepared";

  SampleSet traps = extract_prepared(raster, read_manifest(cfg.data.manifest), cfg);
  traps.validate();
  const SplitResult split = cfg.preprocess.split == "random"
                                ? random_split(traps, cfg.preprocess.test_frac, cfg.preprocess.val_frac,
                                               stage_seed(cfg.seed, Stage::prepare))
                                : longitudinal_split(traps, cfg.preprocess.test_frac, cfg.preprocess.val_frac);
  save_set(split.samples.only(Split::train), dir, "train");
  save_set(split.samples.only(Split::val), dir, "val");
  save_set(split.samples.only(Split::test), dir, "test");

  json concepts = json::object();
  for (const auto& [id, path] : cfg.data.concepts) {
    const SampleSet s = extract_prepared(raster, read_manifest(path), cfg);
    if (s.size() == 0) throw EmptyInput("concept '" + id + "' has no sites");
    save_set(s, dir, "concept_" + id);
    concepts[id] = s.size();
  }
  const SampleSet random = extract_prepared(raster, read_manifest(cfg.data.random), cfg);
  if (random.size() == 0) throw EmptyInput("random manifest has no sites");
  save_set(random, dir, "random");

  const json summary = {{"split", cfg.preprocess.split},
                        {"train", split_entry(split.summary.train)},
                        {"val", split_entry(split.summary.val)},
                        {"test", split_entry(split.summary.test)},
                        {"concepts", concepts},
                        {"random", random.size()},
                        {"patch_size", cfg.preprocess.patch_size},
                        {"resize", cfg.preprocess.resize}};
  write_json(dir / "summary.json", summary);
  return summary;
}

json cmd_train(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path prepared = ctx.out / "prepared";
  const SampleSet train_set = load_set(prepared, "train");
  const SampleSet val_set = load_set(prepared, "val");
  const SampleSet test_set = load_set(prepared, "test");

  NetworkConfig net_cfg = cfg.network;
  net_cfg.seed = stage_seed(cfg.seed, Stage::network_init);
  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = stage_seed(cfg.seed, Stage::train);
  const TrainedModel model = train(ReferenceNet(net_cfg), train_set, val_set, train_cfg);
  save_network(model.net, ctx.out / "model", model.summary());

  json eval = {{"n_test", test_set.size()}};
  if (test_set.size() > 0) {
    const auto probs = predict_proba(model.net, stack_patches(test_set.patches), 1);
    try {
      eval["test"] = EvalMetrics::compute(probs, test_set.labels).to_json();
    } catch (const SingleClass& e) {
      ctx.err << "warning: test AUC undefined: " << e.what() << "\n";
      eval["test"] = nullptr;
    }
  }
  eval["best_epoch"] = model.best_epoch;
  eval["epochs_run"] = model.history.size();
  eval["stopped_early"] = model.stopped_early;
  write_json(ctx.out / "model" / "eval.json", eval);
  return eval;
}

json cmd_export(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path prepared = ctx.out / "prepared";
  const ReferenceNet net = load_network(ctx.out / "model");
  const fs::path bundles = ctx.out / "bundles";
  json summary = json::object();

  auto export_set = [&](const SampleSet& s, const std::string& name, const std::vector<int>& classes) {
    if (s.size() == 0) throw EmptyInput("prepared set '" + name + "' is empty");
    const auto bundle =
        export_activation_bundle(net, stack_patches(s.patches), s.ids, s.labels, classes, cfg.tcav.tap, "model");
    write_bundle(bundle, bundles / name);
    std::size_t excluded = 0;
    for (const auto& g : bundle.gradients)
      for (bool e : g.excluded) excluded += e;
    summary[name] = {{"n", bundle.size()}, {"dim", bundle.dim()}, {"zero_gradients", excluded}};
  };

  export_set(load_set(prepared, "test"), "test", cfg.tcav.classes);
  for (const auto& [id, path] : cfg.data.concepts) {
    SampleSet s = load_set(prepared, "concept_" + id);
    std::fill(s.labels.begin(), s.labels.end(), -1);
    export_set(s, "concept_" + id, {});
  }
  SampleSet random = load_set(prepared, "random");
  std::fill(random.labels.begin(), random.labels.end(), -1);
  export_set(random, "random", {});
  return summary;
}

TcavConfig tcav_config(const RunConfig& cfg) {
  TcavConfig t = cfg.tcav.config;
  t.seed = stage_seed(cfg.seed, Stage::tcav);
  return t;
}

json cmd_tcav(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path bundles = ctx.out / "bundles";
  const ActivationBundle test = read_bundle(bundles / "test");
  const ActivationBundle random = read_bundle(bundles / "random");
  const TcavConfig tcfg = tcav_config(cfg);
  json results = json::array();
  for (const auto& concept_id : cfg.tcav_concepts()) {
    const ActivationBundle concept_bundle = read_bundle(bundles / ("concept_" + concept_id));
    for (int k : cfg.tcav.classes) {
      const auto sel = test.select_gradients(k, k);
      if (sel.rows.rows() == 0)
        throw InsufficientData("no test examples with a usable gradient for class " + std::to_string(k));
      const TcavResult r = bootstrap_tcav(concept_bundle.activations, random.activations, sel.rows, tcfg, concept_id,
                                          k, sel.n_excluded);
      write_json(ctx.out / "tcav" / ("tcav_" + concept_id + "_" + std::to_string(k) + ".json"), r.to_json());
      results.push_back({{"concept", concept_id},
                         {"class", k},
                         {"mean", r.mean},
                         {"std", r.stddev},
                         {"p_value", r.p_undefined ? json(nullptr) : json(r.p_value)},
                         {"n_excluded", r.n_excluded}});
    }
  }
  const json summary = {{"results", results}};
  write_json(ctx.out / "tcav" / "summary.json", summary);
  return summary;
}

json cmd_rank(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path bundles = ctx.out / "bundles";
  const ActivationBundle test = read_bundle(bundles / "test");
  std::vector<ConceptActivations> concepts;
  for (const auto& id : cfg.tcav_concepts())
    concepts.push_back(ConceptActivations::from(id, read_bundle(bundles / ("concept_" + id)).activations));
  json out = json::object();
  for (int k : cfg.tcav.classes) {
    const auto sel = test.select_gradients(k, k);
    if (sel.rows.rows() == 0)
      throw InsufficientData("no test examples with a usable gradient for class " + std::to_string(k));
    RankingTable table = tournament_rank(concepts, sel.rows, k, cfg.tcav.config.threshold);
    table.source = "bundles/test";
    write_json(ctx.out / "rank" / ("ranking_" + std::to_string(k) + ".json"), table.to_json());
    json order = json::array();
    for (const auto& e : table.ranking) order.push_back(e.concept_id);
    out[std::to_string(k)] = order;
  }
  return {{"rankings", out}};
}

json cmd_sanity(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path prepared = ctx.out / "prepared";
  const SampleSet contrast = load_set(prepared, "random");
  json results = json::array();
  std::uint64_t index = 0;
  for (const auto& id : cfg.sanity_concepts()) {
    const SampleSet concept_set = load_set(prepared, "concept_" + id);
    SanityConfig sc;
    sc.test_frac = cfg.sanity.test_frac;
    sc.val_frac = cfg.sanity.val_frac;
    sc.min_auc = cfg.sanity.min_auc;
    sc.network = cfg.network;
    sc.train = cfg.train;
    sc.tcav = cfg.tcav.config;
    sc.seed = derive_seed(stage_seed(cfg.seed, Stage::sanity), index++);
    const SanityReport rep = sanity_check(concept_set, contrast, sc, id);
    const json j = rep.to_json();
    write_json(ctx.out / "sanity" / ("sanity_" + id + ".json"), j);
    results.push_back(j);
  }
  return {{"results", results}};
}

json cmd_predict_map(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  cfg.validate(false);
  if (cfg.data.raster.empty() || !fs::exists(cfg.data.raster))
    throw ValidationError("data.raster does not exist: " + cfg.data.raster.string());
  const MultibandRaster raster = read_raster(cfg.data.raster);
  const ReferenceNet net = load_network(ctx.out / "model");
  PredictMapConfig mcfg = cfg.map;
  mcfg.input_size = cfg.preprocess.resize;
  const DistributionMap map = predict_map(raster, net, mcfg);
  write_distribution_map(map, raster, ctx.out / "map");
  return {{"height", map.probability.rows()},
          {"width", map.probability.cols()},
          {"grid", {map.grid.rows(), map.grid.cols()}},
          {"min", map.probability.minCoeff()},
          {"max", map.probability.maxCoeff()},
          {"mean", map.probability.mean()}};
}

json cmd_report(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  ReportInputs in;
  for (const auto& id : cfg.tcav_concepts())
    for (int k : cfg.tcav.classes) {
      const fs::path p = ctx.out / "tcav" / ("tcav_" + id + "_" + std::to_string(k) + ".json");
      if (fs::exists(p)) in.tcav.push_back(TcavResult::from_json(read_json(p)));
    }
  for (int k : cfg.tcav.classes) {
    const fs::path p = ctx.out / "rank" / ("ranking_" + std::to_string(k) + ".json");
    if (fs::exists(p)) in.rankings.push_back(RankingTable::from_json(read_json(p)));
  }
  const fs::path eval_path = ctx.out / "model" / "eval.json";
  if (fs::exists(eval_path)) {
    const json eval = read_json(eval_path);
    if (eval.contains("test") && !eval.at("test").is_null()) in.metrics = EvalMetrics::from_json(eval.at("test"));
  }
  for (const auto& id : cfg.sanity_concepts()) {
    const fs::path p = ctx.out / "sanity" / ("sanity_" + id + ".json");
    if (!fs::exists(p)) continue;
    const json j = read_json(p);
    SanityReport r;
    r.concept_id = j.at("concept").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.metrics.auc = j.at("auc").get<double>();
    r.metrics.tier = reliability_tier(r.metrics.auc);
    r.presence.mean = j.at("tcav_presence").get<double>();
    r.presence.stddev = j.at("tcav_presence_std").get<double>();
    r.absence.mean = j.at("tcav_absence").get<double>();
    r.absence.stddev = j.at("tcav_absence_std").get<double>();
    r.success = j.at("success").get<bool>();
    in.sanity.push_back(r);
  }
  write_text_atomic(ctx.out / "report" / "tcav.csv", render_tcav_csv(in.tcav));
  write_text_atomic(ctx.out / "report" / "report.md", render_report_markdown(in));
  return {{"tcav_rows", in.tcav.size()}, {"rankings", in.rankings.size()}, {"sanity", in.sanity.size()}};
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

using Handler = json (*)(const Context&);

int run_stage(const std::string& name, Handler handler, const Options& opt, std::ostream& out, std::ostream& err) {
  if (opt.config.empty()) throw ValidationError("--config is required");
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  cfg.validate(false);
  const fs::path out_dir = opt.out.empty() ? cfg.outputs : fs::path(opt.out);
  const Context ctx{cfg, out_dir, err};

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  json result = handler(ctx);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(out_dir / "meta" / (name + ".json"),
             {{"command", name}, {"started", started}, {"finished", utc_now()}, {"seconds", seconds},
              {"config", fs::absolute(opt.config).string()}, {"seed", cfg.seed}});
  out << json{{"command", name}, {"out", out_dir.string()}, {"result", result}}.dump() << "\n";
  return kExitOk;
}

int run_synth(const Options& opt, std::size_t extent, std::ostream& out) {
  if (opt.out.empty()) throw ValidationError("--out is required");
  SynthConfig sc;
  sc.seed = opt.seed.value_or(0);
  sc.extent = extent;
  const auto fx = make_synthetic_fixture(sc);
  const fs::path config = write_synthetic_fixture(fx, sc, opt.out);
  out << json{{"command", "synth"}, {"config", config.string()}, {"traps", fx.traps.size()},
              {"planted", fx.planted.size()}, {"control", fx.control.size()}, {"random", fx.random.size()}}
             .dump()
      << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust TCAV pipeline: prepare, train, export activations, score and rank concepts", "rtcav"};
  app.require_subcommand(1);

  Options opt;
  std::size_t synth_extent = SynthConfig{}.extent;
  struct Command {
    const char* name;
    const char* help;
    Handler handler;
  };
  const std::vector<Command> commands = {
      {"prepare", "Extract, preprocess and split patches from the raster and manifests", cmd_prepare},
      {"train", "Train the reference network on the prepared splits", cmd_train},
      {"export-acts", "Write activation/gradient bundles for test, concept and random sets", cmd_export},
      {"tcav", "Bootstrap TCAV scores for every concept and class", cmd_tcav},
      {"rank", "Tournament ranking of concepts by relative TCAV", cmd_rank},
      {"sanity", "Concept-vs-contrast sanity check per concept", cmd_sanity},
      {"predict-map", "Sliding-window distribution map over the raster", cmd_predict_map},
      {"report", "Render CSV and Markdown tables from earlier outputs", cmd_report},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opt.config, "Run configuration (JSON)");
    sub->add_option("--out", opt.out, "Output directory (defaults to outputs.dir of the config)");
    sub->add_option("--seed", opt.seed, "Override the root seed");
    subs.emplace_back(sub, &c);
  }
  auto* synth = app.add_subcommand("synth", "Write a synthetic fixture with a planted concept and its config");
  synth->add_option("--out", opt.out, "Fixture directory")->required();
  synth->add_option("--seed", opt.seed, "Generator seed");
  synth->add_option("--extent", synth_extent, "Raster height and width in pixels");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) return run_synth(opt, synth_extent, out);
    for (const auto& [sub, cmd] : subs)
      if (sub->parsed()) return run_stage(cmd->name, cmd->handler, opt, out, err);
    err << "error: no subcommand\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error[" << e.kind() << "]: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvalidConfig& e) {
    err << "error[" << e.kind() << "]: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error[" << e.kind() << "]: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace rtcav
