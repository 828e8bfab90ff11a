#pragma once

#include "rtcav/config.hpp"
#include "rtcav/synth.hpp"
#include "rtcav/train.hpp"

// Synthetic landscape plus a reference net trained on its traps, built
// through the library the same way the CLI does.
struct TrainedFixture {
  rtcav::SynthConfig synth;
  rtcav::SynthFixture fx;
  rtcav::RunConfig run;
  rtcav::SampleSet traps;
  rtcav::TrainedModel model;
};

inline rtcav::SampleSet prepared_samples(const rtcav::MultibandRaster& raster,
                                         const std::vector<rtcav::ManifestRow>& rows, std::size_t patch,
                                         std::size_t target) {
  rtcav::SampleSet s = rtcav::extract_samples(raster, rows, patch);
  for (auto& p : s.patches) p = rtcav::preprocess_patch(p, target);
  return s;
}

inline TrainedFixture make_trained_fixture(std::uint64_t seed) {
  using namespace rtcav;
  SynthConfig sc;
  sc.seed = seed;
  SynthFixture fx = make_synthetic_fixture(sc);
  RunConfig run = RunConfig::from_json(synthetic_run_config(sc), ".");
  run.seed = seed;
  SampleSet traps = prepared_samples(fx.raster, fx.traps, sc.patch_size, sc.resize);
  const SampleSet split =
      longitudinal_split(traps, run.preprocess.test_frac, run.preprocess.val_frac).samples;
  NetworkConfig nc = run.network;
  nc.seed = stage_seed(seed, Stage::network_init);
  TrainConfig tc = run.train;
  tc.seed = stage_seed(seed, Stage::train);
  TrainedModel model = train(ReferenceNet(nc), split.only(Split::train), split.only(Split::val), tc);
  return {sc, std::move(fx), std::move(run), split, std::move(model)};
}
