#include "rtcav/bundle.hpp"

#include <nlohmann/json.hpp>

#include "rtcav/fsutil.hpp"
#include "rtcav/parallel.hpp"

namespace rtcav {

namespace fs = std::filesystem;

void ActivationBundle::validate() const {
  const auto n = static_cast<Eigen::Index>(sample_ids.size());
  if (activations.rows() != n) throw ShapeMismatch("bundle activations rows != number of sample ids");
  if (labels.size() != sample_ids.size()) throw ShapeMismatch("bundle labels and sample ids differ in length");
  for (const auto& g : gradients) {
    if (g.rows.rows() != n || g.rows.cols() != activations.cols())
      throw ShapeMismatch("gradient matrix for class " + std::to_string(g.class_id) + " has wrong shape");
    if (g.excluded.size() != sample_ids.size()) throw ShapeMismatch("excluded mask has wrong length");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (g.excluded[static_cast<std::size_t>(i)]) continue;
      if (std::abs(g.rows.row(i).norm() - 1.0) > 1e-9)
        throw ShapeMismatch("gradient row " + std::to_string(i) + " of class " + std::to_string(g.class_id) +
                            " is not unit-norm");
    }
  }
}

const ClassGradients& ActivationBundle::gradients_for(int class_id) const {
  for (const auto& g : gradients)
    if (g.class_id == class_id) return g;
  throw InvalidConfig("bundle has no gradients for class " + std::to_string(class_id));
}

ActivationBundle::Selection ActivationBundle::select_gradients(int class_id, std::optional<int> label) const {
  const auto& g = gradients_for(class_id);
  Selection sel;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    if (label && labels[i] != *label) continue;
    if (g.excluded[i]) {
      ++sel.n_excluded;
      continue;
    }
    keep.push_back(static_cast<Eigen::Index>(i));
    sel.ids.push_back(sample_ids[i]);
  }
  sel.rows.resize(static_cast<Eigen::Index>(keep.size()), g.rows.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) sel.rows.row(static_cast<Eigen::Index>(r)) = g.rows.row(keep[r]);
  return sel;
}

void write_bundle(const ActivationBundle& bundle, const fs::path& dir) {
  bundle.validate();
  fs::create_directories(dir);
  write_tensor(Tensor::from_matrix(bundle.activations, DType::f64, "activations"), dir / "activations.cavt");
  nlohmann::json excluded = nlohmann::json::object();
  std::vector<int> class_ids;
  for (const auto& g : bundle.gradients) {
    const std::string k = std::to_string(g.class_id);
    write_tensor(Tensor::from_matrix(g.rows, DType::f64, "gradients_class" + k), dir / ("gradients_class" + k + ".cavt"));
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < bundle.size(); ++i)
      if (g.excluded[i]) ids.push_back(bundle.sample_ids[i]);
    excluded[k] = ids;
    class_ids.push_back(g.class_id);
  }
  nlohmann::json meta = {{"tap_id", bundle.tap_id},         {"source", bundle.source},
                         {"class_ids", class_ids},          {"sample_ids", bundle.sample_ids},
                         {"labels", bundle.labels},         {"excluded", excluded},
                         {"shape", {bundle.size(), bundle.dim()}}};
  write_text_atomic(dir / "bundle.json", meta.dump(2) + "\n");
}

ActivationBundle read_bundle(const fs::path& dir) {
  const auto meta_path = dir / "bundle.json";
  if (!fs::exists(meta_path)) throw IoError("missing bundle manifest " + meta_path.string());
  const auto meta = nlohmann::json::parse(read_text(meta_path));
  ActivationBundle b;
  b.tap_id = meta.value("tap_id", std::string(kDefaultTap));
  b.source = meta.value("source", std::string{});
  b.sample_ids = meta.at("sample_ids").get<std::vector<std::string>>();
  b.labels = meta.contains("labels") ? meta.at("labels").get<std::vector<int>>()
                                     : std::vector<int>(b.sample_ids.size(), -1);
  const Tensor acts = read_tensor(dir / "activations.cavt");
  if (acts.rank() != 2) throw ShapeMismatch("activations must be [n, m]");
  b.activations = acts.matrix();
  for (int k : meta.at("class_ids").get<std::vector<int>>()) {
    const std::string key = std::to_string(k);
    const Tensor g = read_tensor(dir / ("gradients_class" + key + ".cavt"));
    ClassGradients cg{k, g.matrix(), std::vector<bool>(b.sample_ids.size(), false)};
    const auto excluded = meta.at("excluded").value(key, std::vector<std::string>{});
    for (const auto& id : excluded)
      for (std::size_t i = 0; i < b.sample_ids.size(); ++i)
        if (b.sample_ids[i] == id) cg.excluded[i] = true;
    b.gradients.push_back(std::move(cg));
  }
  b.validate();
  return b;
}

ActivationBundle export_activation_bundle(const ReferenceNet& net, const Tensor& batch,
                                          const std::vector<std::string>& sample_ids, const std::vector<int>& labels,
                                          const std::vector<int>& classes, const std::string& tap,
                                          const std::string& source) {
  if (tap != kDefaultTap) throw InvalidConfig("unknown tap '" + tap + "' (available: concat)");
  if (sample_ids.size() != batch.dim(0) || labels.size() != batch.dim(0))
    throw ShapeMismatch("sample ids / labels do not match the batch size");
  ActivationBundle b;
  b.tap_id = tap;
  b.source = source;
  b.sample_ids = sample_ids;
  b.labels = labels;
  const std::size_t n = batch.dim(0);
  b.activations.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(net.tap_dim()));
  parallel_for(n, [&](std::size_t i) {
    b.activations.row(static_cast<Eigen::Index>(i)) = net.forward(batch_item(batch, i)).tapped.row(0);
  });
  for (int k : classes) {
    ClassGradients cg{k, net.tap_gradients_from(b.activations, static_cast<std::size_t>(k)), std::vector<bool>(n, false)};
    for (std::size_t i = 0; i < n; ++i) {
      auto row = cg.rows.row(static_cast<Eigen::Index>(i));
      const double norm = row.norm();
      if (norm > 0) {
        row /= norm;
      } else {
        row.setZero();
        cg.excluded[i] = true;
      }
    }
    b.gradients.push_back(std::move(cg));
  }
  return b;
}

}  // namespace rtcav
