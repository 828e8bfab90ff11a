#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtcav/rng.hpp"
#include "rtcav/tensor.hpp"

namespace rtcav {

// Multiscale CNN: three parallel branches (initial max-pool, then
// conv -> ReLU -> max-pool(2) blocks with "same" padding), global average
// pooling per branch, concatenation (the default tap), and a dense head.
struct NetworkConfig {
  std::size_t in_channels = 7;
  std::array<std::size_t, 3> branch_kernels = {3, 5, 7};
  std::array<std::size_t, 3> branch_initial_pools = {2, 4, 8};
  std::vector<std::size_t> branch_channels = {8, 16};  // one entry per conv block
  std::vector<std::size_t> head_dims = {64, 32};
  std::vector<double> head_dropout = {0.5, 0.3};
  std::size_t num_classes = 2;
  // "zero" starts the output layer at zero, "he" draws it like hidden layers.
  std::string output_init = "zero";
  std::uint64_t seed = 0;

  // Wider preset (~270k parameters at 7 input bands).
  static NetworkConfig full_scale();

  std::size_t conv_blocks_per_branch() const { return branch_channels.size(); }
  std::size_t tap_dim() const { return 3 * branch_channels.back(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

inline constexpr const char* kDefaultTap = "concat";

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class ReferenceNet {
 public:
  struct Output {
    Matrix logits;  // [n, num_classes]
    Matrix tapped;  // [n, tap_dim]
  };

  // Per-sample intermediate state kept for the backward pass.
  struct Trace;

  explicit ReferenceNet(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<ParamInfo>& layout() const { return layout_; }
  std::size_t num_parameters() const { return static_cast<std::size_t>(params_.size()); }
  std::size_t tap_dim() const { return cfg_.tap_dim(); }

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  Eigen::Map<const Matrix> param(const std::string& name) const;
  Eigen::Map<Matrix> param(const std::string& name);

  // Inference mode: dropout disabled, deterministic. batch is [n, c, h, w].
  Output forward(const Tensor& batch) const;

  // Head only: tap activations [n, m] -> logits [n, classes].
  Matrix head_forward(const Eigen::Ref<const Matrix>& tapped) const;

  // Mean soft-label cross-entropy over the batch and its exact gradient
  // w.r.t. every parameter (same layout as parameters()). With a dropout
  // stream the head runs in training mode.
  double loss_and_gradient(const Tensor& batch, const Eigen::Ref<const Matrix>& targets, Vector& grad,
                           Rng* dropout_rng = nullptr) const;

  double loss(const Tensor& batch, const Eigen::Ref<const Matrix>& targets) const;

  // Gradient of logit `class_k` w.r.t. the tap activation of each sample,
  // in inference mode. Rows are raw (unnormalized) gradients, [n, m].
  Matrix tap_gradients(const Tensor& batch, std::size_t class_k) const;

  // Same, starting from given tap activations (head only).
  Matrix tap_gradients_from(const Eigen::Ref<const Matrix>& tapped, std::size_t class_k) const;

  // Hash of every ReLU mask and max-pool winner for the batch in inference
  // mode; changes exactly when a perturbation crosses a non-smooth point.
  std::uint64_t activation_pattern(const Tensor& batch) const;
  std::uint64_t head_activation_pattern(const Eigen::Ref<const Matrix>& tapped) const;

 private:
  void build_layout();
  void initialize();
  void check_input(const Tensor& batch) const;

  NetworkConfig cfg_;
  std::vector<ParamInfo> layout_;
  Vector params_;
};

// --- loss ----------------------------------------------------------------

// Mean over rows of -sum_k y_k log softmax(z)_k. Labels must be
// non-negative and sum to 1 within 1e-9 (one-hot or MixUp soft labels).
double cross_entropy(const Eigen::Ref<const Matrix>& logits, const Eigen::Ref<const Matrix>& targets);
Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits);
Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes);

// --- optimizer -------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  Vector m;
  Vector v;
  std::uint64_t step = 0;

  explicit AdamWState(std::size_t n = 0) : m(Vector::Zero(static_cast<Eigen::Index>(n))), v(Vector::Zero(static_cast<Eigen::Index>(n))) {}
};

// theta <- theta - lr*wd*theta, then the bias-corrected Adam step.
void adamw_step(Vector& params, const Vector& grads, AdamWState& state, const AdamWConfig& cfg);

// --- tap gradients -----------------------------------------------------------

struct TapGradient {
  Vector raw;
  Vector normalized;  // empty when raw is zero
  bool zero = false;
};

TapGradient grad_activation(const ReferenceNet& net, const Tensor& sample, std::size_t class_k,
                            const std::string& tap = kDefaultTap);

// --- finite differences ------------------------------------------------------

struct FiniteDiffOptions {
  double eps = 1e-5;
  std::size_t param_coords = 200;
  std::size_t tap_coords = 200;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  double max_rel_error_params = 0.0;
  double max_rel_error_tap = 0.0;
  std::size_t param_coords_checked = 0;
  std::size_t tap_coords_checked = 0;
  // Coordinates whose +-eps probe crossed a ReLU/max-pool kink; resampled.
  std::size_t kink_crossings = 0;
};

FiniteDiffReport finite_diff_check(const ReferenceNet& net, const Tensor& batch,
                                   const Eigen::Ref<const Matrix>& targets, const FiniteDiffOptions& opts = {});

// --- checkpoints -------------------------------------------------------------

void save_network(const ReferenceNet& net, const std::filesystem::path& dir, const nlohmann::json& extra = {});
ReferenceNet load_network(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

// Slices sample i out of [n, c, h, w].
Tensor batch_item(const Tensor& batch, std::size_t i);
Tensor batch_items(const Tensor& batch, const std::vector<std::size_t>& indices);

}  // namespace rtcav
