#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rtcav/errors.hpp"

namespace rtcav {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

enum class DType { f32, f64 };

const char* dtype_tag(DType d);
DType parse_dtype(const std::string& tag);
std::size_t dtype_size(DType d);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major n-d array. Storage is always float64; the dtype is the
// precision used at file boundaries. An f32 tensor only ever holds values
// that are exactly representable in float, so write/read is bit-exact.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype = DType::f64, std::string name = {});
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64,
         std::string name = {});

  static Tensor from_matrix(const Eigen::Ref<const Matrix>& m, DType dtype = DType::f64,
                            std::string name = {});
  static Tensor from_vector(const Eigen::Ref<const Vector>& v, DType dtype = DType::f64,
                            std::string name = {});

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  DType dtype() const { return dtype_; }
  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }

  // Writes go through set() so f32 tensors stay float-representable.
  void set(std::size_t i, double v) { data_[i] = round_to_dtype(v); }

  // Rank-2 view, or rank-1 seen as a single row.
  ConstMatrixMap matrix() const;
  Eigen::Map<const Vector> vector() const;

  Tensor reshaped(Shape shape) const;
  Tensor with_dtype(DType dtype) const;

  // Bitwise comparison of dtype, shape, name and every scalar.
  bool bit_equal(const Tensor& other) const;

 private:
  double round_to_dtype(double v) const {
    return dtype_ == DType::f32 ? static_cast<double>(static_cast<float>(v)) : v;
  }
  void validate() const;

  Shape shape_;
  DType dtype_ = DType::f64;
  std::vector<double> data_;
  std::string name_;
};

// CAVT exchange format: "CAVT" | u16 version | u32 header length | JSON header
// | little-endian row-major scalars.
inline constexpr std::uint16_t kCavtVersion = 1;

std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const unsigned char> bytes, const std::string& origin = "<memory>");
void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

// --- vector algebra -------------------------------------------------------

template <typename Derived>
typename Derived::PlainObject l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  const auto norm = v.norm();
  if (!(norm > 0)) throw ZeroVector("cannot normalize a vector with zero norm");
  return v / norm;
}

// Column-wise arithmetic mean of the rows, accumulated incrementally
// (mean += (row - mean) / k) so identical rows reproduce that row exactly.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> mean_rows(
    const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0) throw EmptyMatrix("mean_rows needs at least one row");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = m.row(0).transpose();
  for (Eigen::Index r = 1; r < m.rows(); ++r)
    mean += (m.row(r).transpose() - mean) / static_cast<Scalar>(r + 1);
  return mean;
}

// Sequential left-to-right accumulation; the summation order is part of the
// contract so results are reproducible across builds and vector widths.
template <typename A, typename B>
typename A::Scalar dot(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size())
    throw LengthMismatch("dot of lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  typename A::Scalar acc = 0;
  const auto& ad = a.derived();
  const auto& bd = b.derived();
  for (Eigen::Index i = 0; i < ad.size(); ++i) acc += ad.coeff(i) * bd.coeff(i);
  return acc;
}

// Tensor-level entry points check ranks, then defer to the Eigen versions.
Tensor l2_normalize(const Tensor& v);
Tensor mean_rows(const Tensor& m);
double dot(const Tensor& a, const Tensor& b);

}  // namespace rtcav
