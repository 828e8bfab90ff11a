#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rtcav/refnet.hpp"
#include "rtcav/tensor.hpp"

namespace rtcav {

struct ClassGradients {
  int class_id = 0;
  Matrix rows;                 // [n, m], L2-normalized; zero rows where excluded
  std::vector<bool> excluded;  // zero gradient: sensitivity undefined
};

// Activations f_l(x) and per-class normalized logit gradients at one tap.
// This is the interchange object between a model and the CAV engine; any
// model that can write it can be analysed.
struct ActivationBundle {
  std::string tap_id = kDefaultTap;
  std::string source;  // model identifier
  std::vector<std::string> sample_ids;
  std::vector<int> labels;  // -1 when unlabeled
  Matrix activations;       // [n, m]
  std::vector<ClassGradients> gradients;

  std::size_t size() const { return sample_ids.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(activations.cols()); }
  void validate() const;
  const ClassGradients& gradients_for(int class_id) const;

  struct Selection {
    Matrix rows;
    std::vector<std::string> ids;
    std::size_t n_excluded = 0;
  };
  // Gradient rows for `class_id` over samples whose label matches (all
  // samples when `label` is empty), with excluded rows dropped and counted.
  Selection select_gradients(int class_id, std::optional<int> label) const;
};

// Layout: activations.cavt, gradients_class<k>.cavt, bundle.json.
void write_bundle(const ActivationBundle& bundle, const std::filesystem::path& dir);
ActivationBundle read_bundle(const std::filesystem::path& dir);

// Forward pass in inference mode over [n, c, h, w]; one gradient matrix per
// requested class.
ActivationBundle export_activation_bundle(const ReferenceNet& net, const Tensor& batch,
                                          const std::vector<std::string>& sample_ids, const std::vector<int>& labels,
                                          const std::vector<int>& classes, const std::string& tap = kDefaultTap,
                                          const std::string& source = {});

}  // namespace rtcav
