#include "rtcav/tensor.hpp"

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

#include "rtcav/fsutil.hpp"

namespace rtcav {

static_assert(std::endian::native == std::endian::little,
              "CAVT payloads are little-endian; big-endian hosts need byte swapping");

const char* dtype_tag(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& tag) {
  if (tag == "f32") return DType::f32;
  if (tag == "f64") return DType::f64;
  throw UnsupportedDtype("unknown dtype tag '" + tag + "'");
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, DType dtype, std::string name)
    : shape_(std::move(shape)), dtype_(dtype), data_(shape_numel(shape_), 0.0), name_(std::move(name)) {
  validate();
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype, std::string name)
    : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)), name_(std::move(name)) {
  validate();
  if (dtype_ == DType::f32)
    for (auto& v : data_) v = round_to_dtype(v);
}

void Tensor::validate() const {
  if (shape_.empty()) throw ShapeMismatch("tensor shape must have at least one extent");
  for (auto e : shape_)
    if (e == 0) throw ShapeMismatch("tensor extents must be >= 1, got " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size())
    throw ShapeMismatch("shape " + shape_str(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
}

Tensor Tensor::from_matrix(const Eigen::Ref<const Matrix>& m, DType dtype, std::string name) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Matrix>(data.data(), m.rows(), m.cols()) = m;
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data), dtype, std::move(name));
}

Tensor Tensor::from_vector(const Eigen::Ref<const Vector>& v, DType dtype, std::string name) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()),
                dtype, std::move(name));
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() == 1) return {data_.data(), 1, static_cast<Eigen::Index>(shape_[0])};
  if (rank() != 2) throw ShapeMismatch("matrix view needs rank 1 or 2, got " + shape_str(shape_));
  return {data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
}

Eigen::Map<const Vector> Tensor::vector() const {
  return {data_.data(), static_cast<Eigen::Index>(data_.size())};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_, dtype_, name_);
}

Tensor Tensor::with_dtype(DType dtype) const { return Tensor(shape_, data_, dtype, name_); }

bool Tensor::bit_equal(const Tensor& other) const {
  if (dtype_ != other.dtype_ || shape_ != other.shape_ || name_ != other.name_) return false;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

namespace {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

constexpr std::size_t kPreamble = 4 + 2 + 4;

}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor& t) {
  nlohmann::json header = {{"dtype", dtype_tag(t.dtype())}, {"shape", t.shape()}, {"name", t.name()}};
  const std::string json = header.dump();
  std::vector<unsigned char> out;
  out.reserve(kPreamble + json.size() + t.size() * dtype_size(t.dtype()));
  for (char c : {'C', 'A', 'V', 'T'}) out.push_back(static_cast<unsigned char>(c));
  put_le<std::uint16_t>(out, kCavtVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(json.size()));
  out.insert(out.end(), json.begin(), json.end());
  if (t.dtype() == DType::f32) {
    for (double v : t.data()) put_le<float>(out, static_cast<float>(v));
  } else {
    for (double v : t.data()) put_le<double>(out, v);
  }
  return out;
}

Tensor decode_tensor(std::span<const unsigned char> bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CAVT", 4) != 0)
    throw BadMagic(origin + ": expected magic 'CAVT'");
  if (bytes.size() < kPreamble) throw TruncatedPayload(origin + ": file ends inside the preamble");
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kCavtVersion)
    throw VersionMismatch(origin + ": version " + std::to_string(version) + ", expected " +
                          std::to_string(kCavtVersion));
  const auto header_len = get_le<std::uint32_t>(bytes.data() + 6);
  if (bytes.size() < kPreamble + header_len)
    throw TruncatedPayload(origin + ": file ends inside the JSON header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeader(origin + ": " + e.what());
  }
  DType dtype;
  Shape shape;
  std::string name;
  try {
    dtype = parse_dtype(header.at("dtype").get<std::string>());
    shape = header.at("shape").get<Shape>();
    name = header.value("name", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeader(origin + ": " + e.what());
  }
  if (shape.empty()) throw MalformedHeader(origin + ": empty shape");
  for (auto e : shape)
    if (e == 0) throw MalformedHeader(origin + ": zero extent in shape " + shape_str(shape));

  const std::size_t n = shape_numel(shape);
  const std::size_t expected = n * dtype_size(dtype);
  const std::size_t available = bytes.size() - kPreamble - header_len;
  if (available < expected)
    throw TruncatedPayload(origin + ": payload has " + std::to_string(available) + " bytes, shape " +
                           shape_str(shape) + " needs " + std::to_string(expected));
  if (available > expected)
    throw MalformedHeader(origin + ": " + std::to_string(available - expected) +
                          " trailing bytes after payload");

  const unsigned char* p = bytes.data() + kPreamble + header_len;
  std::vector<double> data(n);
  if (dtype == DType::f32) {
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<float>(p + 4 * i);
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<double>(p + 8 * i);
  }
  return Tensor(std::move(shape), std::move(data), dtype, std::move(name));
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file_atomic(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path), path.string());
}

Tensor l2_normalize(const Tensor& v) {
  if (v.rank() != 1) throw ShapeMismatch("l2_normalize expects a rank-1 tensor, got " + shape_str(v.shape()));
  return Tensor::from_vector(l2_normalize(v.vector()), v.dtype(), v.name());
}

Tensor mean_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeMismatch("mean_rows expects a rank-2 tensor, got " + shape_str(m.shape()));
  return Tensor::from_vector(mean_rows(m.matrix()), m.dtype(), m.name());
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw ShapeMismatch("dot expects rank-1 tensors");
  return dot(a.vector(), b.vector());
}

}  // namespace rtcav
