#include "rtcav/sanity.hpp"

#include "rtcav/bundle.hpp"

namespace rtcav {

nlohmann::json SanityReport::to_json() const {
  return {{"concept", concept_id},
          {"model", model},
          {"auc", metrics.auc},
          {"reliability_tier", tier_name(metrics.tier)},
          {"tcav_presence", presence.mean},
          {"tcav_presence_std", presence.stddev},
          {"tcav_absence", absence.mean},
          {"tcav_absence_std", absence.stddev},
          {"n_train", n_train},
          {"n_val", n_val},
          {"n_test", n_test},
          {"success", success}};
}

SanityReport sanity_check(const SampleSet& concept_patches, const SampleSet& contrast_patches, const SanityConfig& cfg,
                          const std::string& concept_id) {
  if (concept_patches.size() < 2 || contrast_patches.size() < 2)
    throw InsufficientData("sanity check needs at least two patches per side");

  SampleSet all;
  for (std::size_t i = 0; i < concept_patches.size(); ++i)
    all.push_back("concept:" + concept_patches.ids.at(i), concept_patches.patches[i], 1, 0.0);
  for (std::size_t i = 0; i < contrast_patches.size(); ++i)
    all.push_back("contrast:" + contrast_patches.ids.at(i), contrast_patches.patches[i], 0, 0.0);
  const auto split = random_split(all, cfg.test_frac, cfg.val_frac, derive_seed(cfg.seed, 1)).samples;
  const SampleSet train_set = split.only(Split::train);
  const SampleSet val_set = split.only(Split::val);
  const SampleSet test_set = split.only(Split::test);
  if (train_set.size() < 2 || test_set.size() < 2) throw InsufficientData("too few patches after splitting");

  NetworkConfig net_cfg = cfg.network;
  net_cfg.seed = derive_seed(cfg.seed, 2);
  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = derive_seed(cfg.seed, 3);
  const TrainedModel model = train(ReferenceNet(net_cfg), train_set, val_set, train_cfg);

  SanityReport rep;
  rep.concept_id = concept_id;
  rep.n_train = train_set.size();
  rep.n_val = val_set.size();
  rep.n_test = test_set.size();

  const Tensor test_x = stack_patches(test_set.patches);
  const auto probs = predict_proba(model.net, test_x, 1);
  rep.metrics = EvalMetrics::compute(probs, test_set.labels);

  const Tensor train_x = stack_patches(train_set.patches);
  const Matrix train_acts = model.net.forward(train_x).tapped;
  std::vector<Eigen::Index> concept_rows, contrast_rows;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    (train_set.labels[i] == 1 ? concept_rows : contrast_rows).push_back(static_cast<Eigen::Index>(i));
  if (concept_rows.empty() || contrast_rows.empty()) throw InsufficientData("training split lacks one of the classes");
  const Matrix concept_acts = train_acts(concept_rows, Eigen::all);
  const Matrix contrast_acts = train_acts(contrast_rows, Eigen::all);

  const auto bundle = export_activation_bundle(model.net, test_x, test_set.ids, test_set.labels, {1, 0});
  TcavConfig tcav = cfg.tcav;
  tcav.seed = derive_seed(cfg.seed, 4);
  auto score = [&](int k) {
    const auto sel = bundle.select_gradients(k, k);
    if (sel.rows.rows() == 0) throw InsufficientData("no usable test gradients for class " + std::to_string(k));
    try {
      return bootstrap_tcav(concept_acts, contrast_acts, sel.rows, tcav, concept_id, k, sel.n_excluded);
    } catch (const DegenerateCav&) {
      TcavResult r;
      r.concept_id = concept_id;
      r.class_id = k;
      r.mean = std::nan("");
      r.n_skipped = tcav.iterations;
      return r;
    }
  };
  rep.presence = score(1);
  rep.absence = score(0);
  rep.success = rep.metrics.auc >= cfg.min_auc && rep.presence.mean > 0.5 && rep.absence.mean < 0.5;
  return rep;
}

}  // namespace rtcav
