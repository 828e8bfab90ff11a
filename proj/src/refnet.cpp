#include "rtcav/refnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "rtcav/fsutil.hpp"

namespace rtcav {

namespace fs = std::filesystem;

// --- config ------------------------------------------------------------------

NetworkConfig NetworkConfig::full_scale() {
  NetworkConfig c;
  c.branch_channels = {32, 64};
  c.head_dims = {256, 128};
  c.head_dropout = {0.5, 0.3};
  return c;
}

void NetworkConfig::validate() const {
  if (in_channels == 0) throw InvalidConfig("in_channels must be >= 1");
  if (branch_channels.empty()) throw InvalidConfig("each branch needs at least one conv block");
  for (auto c : branch_channels)
    if (c == 0) throw InvalidConfig("branch channel counts must be positive");
  for (auto k : branch_kernels)
    if (k == 0 || k % 2 == 0) throw InvalidConfig("branch kernels must be odd for same padding");
  for (auto p : branch_initial_pools)
    if (p == 0) throw InvalidConfig("initial pool sizes must be positive");
  if (head_dims.size() != head_dropout.size())
    throw InvalidConfig("head_dims and head_dropout must have equal length");
  for (auto d : head_dims)
    if (d == 0) throw InvalidConfig("head dims must be positive");
  for (auto p : head_dropout)
    if (p < 0 || p >= 1) throw InvalidConfig("dropout rates must lie in [0, 1)");
  if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
  if (output_init != "zero" && output_init != "he") throw InvalidConfig("output_init must be 'zero' or 'he'");
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"branch_kernels", c.branch_kernels},
       {"branch_initial_pools", c.branch_initial_pools},
       {"branch_channels", c.branch_channels},
       {"head_dims", c.head_dims},
       {"head_dropout", c.head_dropout},
       {"num_classes", c.num_classes},
       {"output_init", c.output_init},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.branch_kernels = j.value("branch_kernels", d.branch_kernels);
  c.branch_initial_pools = j.value("branch_initial_pools", d.branch_initial_pools);
  c.branch_channels = j.value("branch_channels", d.branch_channels);
  c.head_dims = j.value("head_dims", d.head_dims);
  c.head_dropout = j.value("head_dropout", d.head_dropout);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.output_init = j.value("output_init", d.output_init);
  c.seed = j.value("seed", d.seed);
}

// --- low-level kernels ----------------------------------------------------------

namespace {

struct PoolTrace {
  std::size_t in_h = 0, in_w = 0;
  std::vector<std::int32_t> argmax;  // per output element, index into the input plane
};

Matrix max_pool(const Matrix& x, std::size_t h, std::size_t w, std::size_t p, PoolTrace* trace) {
  const std::size_t oh = h / p, ow = w / p;
  const auto channels = static_cast<std::size_t>(x.rows());
  Matrix out(x.rows(), static_cast<Eigen::Index>(oh * ow));
  if (trace) {
    trace->in_h = h;
    trace->in_w = w;
    trace->argmax.resize(channels * oh * ow);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x.row(static_cast<Eigen::Index>(c)).data();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = oy * p * w + ox * p;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t idx = (oy * p + dy) * w + ox * p + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(oy * ow + ox)) = plane[best];
        if (trace) trace->argmax[c * oh * ow + oy * ow + ox] = static_cast<std::int32_t>(best);
      }
  }
  return out;
}

Matrix max_pool_backward(const Matrix& dout, const PoolTrace& t) {
  Matrix dx = Matrix::Zero(dout.rows(), static_cast<Eigen::Index>(t.in_h * t.in_w));
  const auto per = static_cast<std::size_t>(dout.cols());
  for (Eigen::Index c = 0; c < dout.rows(); ++c)
    for (std::size_t i = 0; i < per; ++i)
      dx(c, t.argmax[static_cast<std::size_t>(c) * per + i]) += dout(c, static_cast<Eigen::Index>(i));
  return dx;
}

// [cin, h*w] -> [cin*k*k, h*w] with zero "same" padding.
Matrix im2col(const Matrix& x, std::size_t h, std::size_t w, std::size_t k) {
  const auto cin = static_cast<std::size_t>(x.rows());
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < cin; ++c) {
    const double* plane = x.row(static_cast<Eigen::Index>(c)).data();
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols.row(static_cast<Eigen::Index>((c * k + ky) * k + kx)).data();
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const auto sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            row[y * w + xx] = plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < cin; ++c) {
    double* plane = x.row(static_cast<Eigen::Index>(c)).data();
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols.row(static_cast<Eigen::Index>((c * k + ky) * k + kx)).data();
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const auto sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += row[y * w + xx];
          }
        }
      }
  }
  return x;
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
};

}  // namespace

struct BlockTrace {
  Matrix cols;
  Matrix relu_out;
  PoolTrace pool;
};

struct BranchTrace {
  PoolTrace initial;
  std::vector<BlockTrace> blocks;
  std::size_t out_h = 0, out_w = 0;
};

struct ReferenceNet::Trace {
  std::vector<BranchTrace> branches;
  Vector tap;
  std::vector<Vector> head_inputs;  // input to each dense layer, including the output layer
  std::vector<Vector> head_relu;    // post-ReLU (pre-dropout) output of each hidden layer
  std::vector<Vector> head_dropout; // dropout scale per hidden unit (empty in inference)
  Vector logits;

  std::uint64_t pattern() const {
    Fnv f;
    for (const auto& b : branches) {
      for (auto a : b.initial.argmax) f.add(static_cast<std::uint64_t>(a));
      for (const auto& blk : b.blocks) {
        for (Eigen::Index i = 0; i < blk.relu_out.size(); ++i) f.add(blk.relu_out.data()[i] > 0);
        for (auto a : blk.pool.argmax) f.add(static_cast<std::uint64_t>(a));
      }
    }
    for (const auto& r : head_relu)
      for (Eigen::Index i = 0; i < r.size(); ++i) f.add(r[i] > 0);
    return f.h;
  }
};

namespace {

std::uint64_t head_pattern_of(const ReferenceNet::Trace& t) {
  Fnv f;
  for (const auto& r : t.head_relu)
    for (Eigen::Index i = 0; i < r.size(); ++i) f.add(r[i] > 0);
  return f.h;
}

}  // namespace

// --- network -------------------------------------------------------------------

ReferenceNet::ReferenceNet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_layout();
  initialize();
}

void ReferenceNet::build_layout() {
  std::size_t offset = 0;
  auto add = [&](std::string name, Shape shape) {
    const auto n = shape_numel(shape);
    layout_.push_back({std::move(name), std::move(shape), offset, n});
    offset += n;
  };
  for (std::size_t b = 0; b < 3; ++b) {
    std::size_t cin = cfg_.in_channels;
    const std::size_t k = cfg_.branch_kernels[b];
    for (std::size_t j = 0; j < cfg_.branch_channels.size(); ++j) {
      const std::size_t cout = cfg_.branch_channels[j];
      const std::string prefix = "branch" + std::to_string(b) + ".conv" + std::to_string(j);
      add(prefix + ".weight", {cout, cin, k, k});
      add(prefix + ".bias", {cout});
      cin = cout;
    }
  }
  std::size_t in = cfg_.tap_dim();
  for (std::size_t l = 0; l < cfg_.head_dims.size(); ++l) {
    add("head.dense" + std::to_string(l) + ".weight", {cfg_.head_dims[l], in});
    add("head.dense" + std::to_string(l) + ".bias", {cfg_.head_dims[l]});
    in = cfg_.head_dims[l];
  }
  add("head.out.weight", {cfg_.num_classes, in});
  add("head.out.bias", {cfg_.num_classes});
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

void ReferenceNet::initialize() {
  Rng rng(derive_seed(cfg_.seed, 0x1417));
  for (const auto& p : layout_) {
    if (p.shape.size() == 1) continue;  // biases start at zero
    const bool is_output = p.name == "head.out.weight";
    if (is_output && cfg_.output_init == "zero") continue;
    const std::size_t fan_in = p.size / p.shape[0];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < p.size; ++i) params_[static_cast<Eigen::Index>(p.offset + i)] = rng.normal(0.0, stddev);
  }
}

Eigen::Map<const Matrix> ReferenceNet::param(const std::string& name) const {
  for (const auto& p : layout_)
    if (p.name == name)
      return {params_.data() + p.offset, static_cast<Eigen::Index>(p.shape[0]),
              static_cast<Eigen::Index>(p.size / p.shape[0])};
  throw InvalidConfig("no parameter named '" + name + "'");
}

Eigen::Map<Matrix> ReferenceNet::param(const std::string& name) {
  for (const auto& p : layout_)
    if (p.name == name)
      return {params_.data() + p.offset, static_cast<Eigen::Index>(p.shape[0]),
              static_cast<Eigen::Index>(p.size / p.shape[0])};
  throw InvalidConfig("no parameter named '" + name + "'");
}

void ReferenceNet::check_input(const Tensor& batch) const {
  if (batch.rank() != 4) throw ShapeMismatch("network input must be [n, c, h, w], got " + shape_str(batch.shape()));
  if (batch.dim(1) != cfg_.in_channels)
    throw ShapeMismatch("network expects " + std::to_string(cfg_.in_channels) + " channels, got " +
                        std::to_string(batch.dim(1)));
  for (std::size_t b = 0; b < 3; ++b) {
    std::size_t h = batch.dim(2) / cfg_.branch_initial_pools[b];
    std::size_t w = batch.dim(3) / cfg_.branch_initial_pools[b];
    for (std::size_t j = 0; j < cfg_.branch_channels.size(); ++j) {
      h /= 2;
      w /= 2;
    }
    if (h == 0 || w == 0)
      throw ShapeMismatch("input " + std::to_string(batch.dim(2)) + "x" + std::to_string(batch.dim(3)) +
                          " is too small for branch " + std::to_string(b));
  }
}

namespace {

struct Views {
  const ReferenceNet& net;
  const Vector& params;
  const std::vector<ParamInfo>& layout;

  Eigen::Map<const Matrix> mat(std::size_t i) const {
    const auto& p = layout[i];
    return {params.data() + p.offset, static_cast<Eigen::Index>(p.shape[0]), static_cast<Eigen::Index>(p.size / p.shape[0])};
  }
  Eigen::Map<const Vector> vec(std::size_t i) const {
    const auto& p = layout[i];
    return {params.data() + p.offset, static_cast<Eigen::Index>(p.size)};
  }
};

Eigen::Map<Matrix> grad_mat(Vector& g, const ParamInfo& p) {
  return {g.data() + p.offset, static_cast<Eigen::Index>(p.shape[0]), static_cast<Eigen::Index>(p.size / p.shape[0])};
}

Eigen::Map<Vector> grad_vec(Vector& g, const ParamInfo& p) {
  return {g.data() + p.offset, static_cast<Eigen::Index>(p.size)};
}

std::size_t head_param_index(const NetworkConfig& cfg) { return 3 * 2 * cfg.branch_channels.size(); }

// Runs the dense head on one tap vector, filling the trace.
void run_head(const NetworkConfig& cfg, const Views& v, const Vector& tap, ReferenceNet::Trace& t, Rng* dropout) {
  std::size_t pi = head_param_index(cfg);
  Vector z = tap;
  t.head_inputs.clear();
  t.head_relu.clear();
  t.head_dropout.clear();
  for (std::size_t l = 0; l < cfg.head_dims.size(); ++l, pi += 2) {
    t.head_inputs.push_back(z);
    Vector a = (v.mat(pi) * z + v.vec(pi + 1)).cwiseMax(0.0);
    t.head_relu.push_back(a);
    if (dropout && cfg.head_dropout[l] > 0) {
      const double keep = 1.0 - cfg.head_dropout[l];
      Vector scale(a.size());
      for (Eigen::Index i = 0; i < a.size(); ++i) scale[i] = dropout->bernoulli(keep) ? 1.0 / keep : 0.0;
      a = a.cwiseProduct(scale);
      t.head_dropout.push_back(std::move(scale));
    } else {
      t.head_dropout.emplace_back();
    }
    z = std::move(a);
  }
  t.head_inputs.push_back(z);
  t.logits = v.mat(pi) * z + v.vec(pi + 1);
}

// Backprop dlogits through the head; accumulates parameter gradients when
// `grad` is non-null and returns d(loss)/d(tap).
Vector backprop_head(const NetworkConfig& cfg, const Views& v, const ReferenceNet::Trace& t, const Vector& dlogits,
                     Vector* grad) {
  const std::size_t first = head_param_index(cfg);
  std::size_t pi = first + 2 * cfg.head_dims.size();
  if (grad) {
    grad_mat(*grad, v.layout[pi]).noalias() += dlogits * t.head_inputs.back().transpose();
    grad_vec(*grad, v.layout[pi + 1]) += dlogits;
  }
  Vector dz = v.mat(pi).transpose() * dlogits;
  for (std::size_t l = cfg.head_dims.size(); l-- > 0;) {
    pi -= 2;
    if (t.head_dropout[l].size()) dz = dz.cwiseProduct(t.head_dropout[l]);
    for (Eigen::Index i = 0; i < dz.size(); ++i)
      if (!(t.head_relu[l][i] > 0)) dz[i] = 0;
    if (grad) {
      grad_mat(*grad, v.layout[pi]).noalias() += dz * t.head_inputs[l].transpose();
      grad_vec(*grad, v.layout[pi + 1]) += dz;
    }
    dz = v.mat(pi).transpose() * dz;
  }
  return dz;
}

void run_sample(const NetworkConfig& cfg, const Views& v, const Tensor& batch, std::size_t n, ReferenceNet::Trace& t,
                Rng* dropout) {
  const std::size_t c = batch.dim(1), h0 = batch.dim(2), w0 = batch.dim(3);
  const ConstMatrixMap input(batch.data().data() + n * c * h0 * w0, static_cast<Eigen::Index>(c),
                             static_cast<Eigen::Index>(h0 * w0));
  const Matrix x0 = input;
  t.branches.assign(3, {});
  t.tap.resize(static_cast<Eigen::Index>(cfg.tap_dim()));
  const std::size_t blocks = cfg.branch_channels.size();
  Eigen::Index tap_offset = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    auto& bt = t.branches[b];
    const std::size_t p0 = cfg.branch_initial_pools[b];
    const std::size_t k = cfg.branch_kernels[b];
    Matrix x = max_pool(x0, h0, w0, p0, &bt.initial);
    std::size_t h = h0 / p0, w = w0 / p0;
    bt.blocks.resize(blocks);
    for (std::size_t j = 0; j < blocks; ++j) {
      auto& blk = bt.blocks[j];
      const std::size_t pi = (b * blocks + j) * 2;
      blk.cols = im2col(x, h, w, k);
      Matrix pre = v.mat(pi) * blk.cols;
      pre.colwise() += v.vec(pi + 1);
      blk.relu_out = pre.cwiseMax(0.0);
      x = max_pool(blk.relu_out, h, w, 2, &blk.pool);
      h /= 2;
      w /= 2;
    }
    bt.out_h = h;
    bt.out_w = w;
    const auto ch = x.rows();
    t.tap.segment(tap_offset, ch) = x.rowwise().mean();
    tap_offset += ch;
  }
  run_head(cfg, v, t.tap, t, dropout);
}

void backprop_sample(const NetworkConfig& cfg, const Views& v, const ReferenceNet::Trace& t, const Vector& dlogits,
                     Vector& grad) {
  const Vector dtap = backprop_head(cfg, v, t, dlogits, &grad);
  const std::size_t blocks = cfg.branch_channels.size();
  Eigen::Index tap_offset = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& bt = t.branches[b];
    const std::size_t k = cfg.branch_kernels[b];
    const auto ch = static_cast<Eigen::Index>(cfg.branch_channels.back());
    const auto area = static_cast<Eigen::Index>(bt.out_h * bt.out_w);
    Matrix d = (dtap.segment(tap_offset, ch) / static_cast<double>(area)).replicate(1, area);
    tap_offset += ch;
    for (std::size_t j = blocks; j-- > 0;) {
      const auto& blk = bt.blocks[j];
      const std::size_t pi = (b * blocks + j) * 2;
      Matrix dpre = max_pool_backward(d, blk.pool);
      dpre = dpre.cwiseProduct((blk.relu_out.array() > 0).cast<double>().matrix());
      grad_mat(grad, v.layout[pi]).noalias() += dpre * blk.cols.transpose();
      grad_vec(grad, v.layout[pi + 1]) += dpre.rowwise().sum();
      if (j == 0) break;
      const Matrix dcols = v.mat(pi).transpose() * dpre;
      d = col2im(dcols, cfg.branch_channels[j - 1], blk.pool.in_h, blk.pool.in_w, k);
    }
  }
}

}  // namespace

ReferenceNet::Output ReferenceNet::forward(const Tensor& batch) const {
  check_input(batch);
  const Views v{*this, params_, layout_};
  const std::size_t n = batch.dim(0);
  Output out{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg_.num_classes)),
             Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tap_dim()))};
  Trace t;
  for (std::size_t i = 0; i < n; ++i) {
    run_sample(cfg_, v, batch, i, t, nullptr);
    out.logits.row(static_cast<Eigen::Index>(i)) = t.logits.transpose();
    out.tapped.row(static_cast<Eigen::Index>(i)) = t.tap.transpose();
  }
  return out;
}

Matrix ReferenceNet::head_forward(const Eigen::Ref<const Matrix>& tapped) const {
  if (static_cast<std::size_t>(tapped.cols()) != tap_dim())
    throw ShapeMismatch("tap activations have " + std::to_string(tapped.cols()) + " columns, expected " +
                        std::to_string(tap_dim()));
  const Views v{*this, params_, layout_};
  Matrix logits(tapped.rows(), static_cast<Eigen::Index>(cfg_.num_classes));
  Trace t;
  for (Eigen::Index i = 0; i < tapped.rows(); ++i) {
    run_head(cfg_, v, tapped.row(i).transpose(), t, nullptr);
    logits.row(i) = t.logits.transpose();
  }
  return logits;
}

double ReferenceNet::loss_and_gradient(const Tensor& batch, const Eigen::Ref<const Matrix>& targets, Vector& grad,
                                       Rng* dropout_rng) const {
  check_input(batch);
  const std::size_t n = batch.dim(0);
  if (static_cast<std::size_t>(targets.rows()) != n || static_cast<std::size_t>(targets.cols()) != cfg_.num_classes)
    throw ShapeMismatch("targets must be [n, num_classes]");
  const Views v{*this, params_, layout_};
  grad = Vector::Zero(params_.size());
  Matrix logits(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg_.num_classes));
  std::vector<Trace> traces(n);
  for (std::size_t i = 0; i < n; ++i) {
    run_sample(cfg_, v, batch, i, traces[i], dropout_rng);
    logits.row(static_cast<Eigen::Index>(i)) = traces[i].logits.transpose();
  }
  const double loss = cross_entropy(logits, targets);
  const Matrix dlogits = (softmax_rows(logits) - targets) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    backprop_sample(cfg_, v, traces[i], dlogits.row(static_cast<Eigen::Index>(i)).transpose(), grad);
  return loss;
}

double ReferenceNet::loss(const Tensor& batch, const Eigen::Ref<const Matrix>& targets) const {
  return cross_entropy(forward(batch).logits, targets);
}

Matrix ReferenceNet::tap_gradients_from(const Eigen::Ref<const Matrix>& tapped, std::size_t class_k) const {
  if (class_k >= cfg_.num_classes) throw InvalidConfig("class index " + std::to_string(class_k) + " out of range");
  if (static_cast<std::size_t>(tapped.cols()) != tap_dim()) throw ShapeMismatch("tap activations have wrong width");
  const Views v{*this, params_, layout_};
  Matrix out(tapped.rows(), tapped.cols());
  Vector e = Vector::Zero(static_cast<Eigen::Index>(cfg_.num_classes));
  e[static_cast<Eigen::Index>(class_k)] = 1.0;
  Trace t;
  for (Eigen::Index i = 0; i < tapped.rows(); ++i) {
    run_head(cfg_, v, tapped.row(i).transpose(), t, nullptr);
    out.row(i) = backprop_head(cfg_, v, t, e, nullptr).transpose();
  }
  return out;
}

Matrix ReferenceNet::tap_gradients(const Tensor& batch, std::size_t class_k) const {
  return tap_gradients_from(forward(batch).tapped, class_k);
}

std::uint64_t ReferenceNet::activation_pattern(const Tensor& batch) const {
  check_input(batch);
  const Views v{*this, params_, layout_};
  Fnv f;
  Trace t;
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    run_sample(cfg_, v, batch, i, t, nullptr);
    f.add(t.pattern());
  }
  return f.h;
}

std::uint64_t ReferenceNet::head_activation_pattern(const Eigen::Ref<const Matrix>& tapped) const {
  const Views v{*this, params_, layout_};
  Fnv f;
  Trace t;
  for (Eigen::Index i = 0; i < tapped.rows(); ++i) {
    run_head(cfg_, v, tapped.row(i).transpose(), t, nullptr);
    f.add(head_pattern_of(t));
  }
  return f.h;
}

// --- loss ----------------------------------------------------------------------

Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

double cross_entropy(const Eigen::Ref<const Matrix>& logits, const Eigen::Ref<const Matrix>& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw ShapeMismatch("logits and labels differ in shape");
  if (logits.rows() == 0) throw EmptyInput("cross_entropy of an empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < targets.cols(); ++k) {
      if (targets(i, k) < 0) throw InvalidLabel("label component is negative");
      sum += targets(i, k);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidLabel("label row sums to " + std::to_string(sum) + ", expected 1");
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    double row = 0.0;
    for (Eigen::Index k = 0; k < targets.cols(); ++k)
      if (targets(i, k) != 0) row -= targets(i, k) * (logits(i, k) - lse);
    total += row;
  }
  return total / static_cast<double>(logits.rows());
}

Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw InvalidLabel("class id " + std::to_string(labels[i]) + " out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

// --- optimizer -------------------------------------------------------------------

void adamw_step(Vector& params, const Vector& grads, AdamWState& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeMismatch("optimizer state, parameters and gradients differ in size");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

// --- tap gradients -----------------------------------------------------------------

TapGradient grad_activation(const ReferenceNet& net, const Tensor& sample, std::size_t class_k,
                            const std::string& tap) {
  if (tap != kDefaultTap) throw InvalidConfig("unknown tap '" + tap + "' (available: concat)");
  const Tensor batch = sample.rank() == 3 ? sample.reshaped({1, sample.dim(0), sample.dim(1), sample.dim(2)}) : sample;
  if (batch.dim(0) != 1) throw ShapeMismatch("grad_activation takes a single sample");
  TapGradient g;
  g.raw = net.tap_gradients(batch, class_k).row(0).transpose();
  const double norm = g.raw.norm();
  g.zero = !(norm > 0);
  if (!g.zero) g.normalized = g.raw / norm;
  return g;
}

// --- finite differences -----------------------------------------------------------

namespace {

double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace

FiniteDiffReport finite_diff_check(const ReferenceNet& net, const Tensor& batch,
                                   const Eigen::Ref<const Matrix>& targets, const FiniteDiffOptions& opts) {
  FiniteDiffReport rep;
  Rng rng(derive_seed(opts.seed, 0xFD));
  const double eps = opts.eps;

  // Parameters.
  Vector grad;
  net.loss_and_gradient(batch, targets, grad);
  ReferenceNet probe = net;
  const std::uint64_t base_pattern = net.activation_pattern(batch);
  const auto n_params = net.num_parameters();
  std::unordered_set<std::size_t> seen;
  const std::size_t want_params = std::min(opts.param_coords, n_params);
  std::size_t attempts = 0;
  while (rep.param_coords_checked < want_params && attempts < 50 * n_params) {
    ++attempts;
    const auto i = rng.index(n_params);
    if (!seen.insert(i).second) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    const double theta = net.parameters()[ii];
    probe.parameters()[ii] = theta + eps;
    const double lp = probe.loss(batch, targets);
    const bool kink_p = probe.activation_pattern(batch) != base_pattern;
    probe.parameters()[ii] = theta - eps;
    const double lm = probe.loss(batch, targets);
    const bool kink_m = probe.activation_pattern(batch) != base_pattern;
    probe.parameters()[ii] = theta;
    if (kink_p || kink_m) {
      ++rep.kink_crossings;
      continue;
    }
    const double numeric = (lp - lm) / (2 * eps);
    rep.max_rel_error_params = std::max(rep.max_rel_error_params, rel_error(grad[ii], numeric, opts.abs_floor));
    ++rep.param_coords_checked;
  }

  // Tap vector: loss as a function of the tap activations through the head.
  const Matrix tapped = net.forward(batch).tapped;
  const auto n = static_cast<std::size_t>(tapped.rows());
  const auto m = static_cast<std::size_t>(tapped.cols());
  const Matrix dlogits = (softmax_rows(net.head_forward(tapped)) - targets) / static_cast<double>(n);
  Matrix dtap = Matrix::Zero(tapped.rows(), tapped.cols());
  for (std::size_t k = 0; k < net.config().num_classes; ++k) {
    const Matrix gk = net.tap_gradients_from(tapped, k);
    dtap.array() += gk.array().colwise() * dlogits.col(static_cast<Eigen::Index>(k)).array();
  }
  const std::uint64_t head_base = net.head_activation_pattern(tapped);
  const std::size_t want_tap = std::min(opts.tap_coords, n * m);
  seen.clear();
  attempts = 0;
  Matrix perturbed = tapped;
  while (rep.tap_coords_checked < want_tap && attempts < 50 * n * m) {
    ++attempts;
    const auto flat = rng.index(n * m);
    if (!seen.insert(flat).second) continue;
    const auto r = static_cast<Eigen::Index>(flat / m), c = static_cast<Eigen::Index>(flat % m);
    const double a = tapped(r, c);
    perturbed(r, c) = a + eps;
    const double lp = cross_entropy(net.head_forward(perturbed), targets);
    const bool kink_p = net.head_activation_pattern(perturbed) != head_base;
    perturbed(r, c) = a - eps;
    const double lm = cross_entropy(net.head_forward(perturbed), targets);
    const bool kink_m = net.head_activation_pattern(perturbed) != head_base;
    perturbed(r, c) = a;
    if (kink_p || kink_m) {
      ++rep.kink_crossings;
      continue;
    }
    const double numeric = (lp - lm) / (2 * eps);
    rep.max_rel_error_tap = std::max(rep.max_rel_error_tap, rel_error(dtap(r, c), numeric, opts.abs_floor));
    ++rep.tap_coords_checked;
  }
  rep.max_rel_error = std::max(rep.max_rel_error_params, rep.max_rel_error_tap);
  return rep;
}

// --- checkpoints ----------------------------------------------------------------------

void save_network(const ReferenceNet& net, const fs::path& dir, const nlohmann::json& extra) {
  fs::create_directories(dir / "params");
  nlohmann::json meta;
  meta["network"] = net.config();
  meta["parameters"] = nlohmann::json::array();
  for (const auto& p : net.layout()) {
    const std::string file = "params/" + p.name + ".cavt";
    std::vector<double> values(net.parameters().data() + p.offset, net.parameters().data() + p.offset + p.size);
    write_tensor(Tensor(p.shape, std::move(values), DType::f64, p.name), dir / file);
    meta["parameters"].push_back({{"name", p.name}, {"shape", p.shape}, {"file", file}});
  }
  if (!extra.is_null()) meta["extra"] = extra;
  write_text_atomic(dir / "model.json", meta.dump(2) + "\n");
}

ReferenceNet load_network(const fs::path& dir, nlohmann::json* extra) {
  const auto meta_path = dir / "model.json";
  if (!fs::exists(meta_path)) throw IoError("missing checkpoint metadata " + meta_path.string());
  const auto meta = nlohmann::json::parse(read_text(meta_path));
  ReferenceNet net(meta.at("network").get<NetworkConfig>());
  for (const auto& entry : meta.at("parameters")) {
    const auto name = entry.at("name").get<std::string>();
    const Tensor t = read_tensor(dir / entry.at("file").get<std::string>());
    const auto it = std::find_if(net.layout().begin(), net.layout().end(), [&](const ParamInfo& p) { return p.name == name; });
    if (it == net.layout().end()) throw MalformedHeader("checkpoint has unknown parameter " + name);
    if (t.shape() != it->shape) throw ShapeMismatch("checkpoint parameter " + name + " has shape " + shape_str(t.shape()));
    std::copy(t.values().begin(), t.values().end(), net.parameters().data() + it->offset);
  }
  if (extra) *extra = meta.value("extra", nlohmann::json{});
  return net;
}

Tensor batch_item(const Tensor& batch, std::size_t i) { return batch_items(batch, {i}); }

Tensor batch_items(const Tensor& batch, const std::vector<std::size_t>& indices) {
  if (batch.rank() != 4) throw ShapeMismatch("expected [n, c, h, w]");
  const std::size_t per = batch.size() / batch.dim(0);
  std::vector<double> data;
  data.reserve(indices.size() * per);
  for (auto i : indices) {
    if (i >= batch.dim(0)) throw ShapeMismatch("batch index out of range");
    data.insert(data.end(), batch.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                batch.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  return Tensor({indices.size(), batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(data), batch.dtype());
}

}  // namespace rtcav
