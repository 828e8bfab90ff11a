#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "rtcav/fsutil.hpp"
#include "rtcav/tensor.hpp"
#include "support.hpp"

using namespace rtcav;

namespace {

std::vector<unsigned char> bytes_of(const Tensor& t) { return encode_tensor(t); }

std::size_t header_len(const std::vector<unsigned char>& b) {
  std::uint32_t n;
  std::memcpy(&n, b.data() + 6, 4);
  return n;
}

template <typename E>
void expect_decode_error(const std::vector<unsigned char>& bytes) {
  EXPECT_THROW(decode_tensor(bytes), E);
}

}  // namespace

TEST(Tensor, RejectsZeroExtent) {
  EXPECT_THROW(Tensor({2, 0}), ShapeMismatch);
  EXPECT_THROW(Tensor(Shape{}), ShapeMismatch);
}

TEST(Tensor, RejectsDataShapeMismatch) { EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 0.0)), ShapeMismatch); }

TEST(Tensor, F32ValuesAreRoundedOnConstruction) {
  Tensor t({1}, {0.1}, DType::f32);
  EXPECT_EQ(t[0], static_cast<double>(0.1f));
}

TEST(Cavt, ScalarF32ByteLength) {
  Tensor t({1}, {0.0}, DType::f32);
  const auto b = bytes_of(t);
  EXPECT_EQ(b.size(), 4 + 2 + 4 + header_len(b) + 4);
  EXPECT_EQ(std::memcmp(b.data(), "CAVT", 4), 0);
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0);
}

TEST(Cavt, RoundTripF64Matrix) {
  TempDir dir("tensor");
  Tensor t({2, 3}, {1.5, -2.25, 3.0e-300, 4.0, 5.125, -0.0}, DType::f64, "acts");
  write_tensor(t, dir / "t.cavt");
  EXPECT_TRUE(read_tensor(dir / "t.cavt").bit_equal(t));
}

TEST(Cavt, ActivationMatrixByteCount) {
  TempDir dir("tensor");
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<double> v(500 * 8);
  for (auto& x : v) x = nd(gen);
  Tensor t({500, 8}, v, DType::f32, "activations");
  write_tensor(t, dir / "a.cavt");
  const auto bytes = read_file_bytes(dir / "a.cavt");
  const std::string header = R"({"dtype":"f32","name":"activations","shape":[500,8]})";
  EXPECT_EQ(header_len(bytes), header.size());
  EXPECT_EQ(bytes.size(), 10 + header.size() + 500 * 8 * 4);
  EXPECT_TRUE(read_tensor(dir / "a.cavt").bit_equal(t));
}

TEST(Cavt, PayloadIsLittleEndianRowMajor) {
  Tensor t({2, 2}, {1.0, 2.0, 3.0, 4.0}, DType::f32);
  const auto b = bytes_of(t);
  const std::size_t off = 10 + header_len(b);
  for (int i = 0; i < 4; ++i) {
    float f;
    std::memcpy(&f, b.data() + off + 4 * i, 4);
    EXPECT_EQ(f, static_cast<float>(i + 1));
  }
}

TEST(Cavt, BadMagic) {
  auto b = bytes_of(Tensor({2}, {1.0, 2.0}));
  std::memcpy(b.data(), "XXXX", 4);
  expect_decode_error<BadMagic>(b);
}

TEST(Cavt, VersionMismatch) {
  auto b = bytes_of(Tensor({2}, {1.0, 2.0}));
  b[4] = 2;
  expect_decode_error<VersionMismatch>(b);
}

TEST(Cavt, PayloadOneScalarShort) {
  auto b = bytes_of(Tensor({3}, {1.0, 2.0, 3.0}));
  b.resize(b.size() - 8);
  expect_decode_error<TruncatedPayload>(b);
}

TEST(Cavt, TruncatedInsidePreambleAndHeader) {
  const auto b = bytes_of(Tensor({3}, {1.0, 2.0, 3.0}));
  expect_decode_error<TruncatedPayload>({b.begin(), b.begin() + 7});
  expect_decode_error<TruncatedPayload>({b.begin(), b.begin() + 14});
}

TEST(Cavt, MalformedHeader) {
  auto b = bytes_of(Tensor({1}, {1.0}));
  b[10] = '[';
  expect_decode_error<MalformedHeader>(b);
  auto extra = bytes_of(Tensor({1}, {1.0}));
  extra.push_back(0);
  expect_decode_error<MalformedHeader>(extra);
}

TEST(Cavt, UnknownDtypeTag) {
  const std::string json = R"({"dtype":"i32","shape":[1],"name":""})";
  std::vector<unsigned char> b = {'C', 'A', 'V', 'T', 1, 0};
  const auto n = static_cast<std::uint32_t>(json.size());
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(n >> (8 * i)));
  b.insert(b.end(), json.begin(), json.end());
  b.insert(b.end(), 4, 0);
  expect_decode_error<UnsupportedDtype>(b);
}

TEST(Cavt, MissingFileIsIoError) { EXPECT_THROW(read_tensor("/nonexistent/x.cavt"), IoError); }

TEST(VectorAlgebra, NormalizeThreeFour) {
  const Vector v = l2_normalize(Vector{{3.0, 4.0}});
  EXPECT_DOUBLE_EQ(v[0], 0.6);
  EXPECT_DOUBLE_EQ(v[1], 0.8);
}

TEST(VectorAlgebra, NormalizeZeroThrows) { EXPECT_THROW(l2_normalize(Vector{{0.0, 0.0}}), ZeroVector); }

TEST(VectorAlgebra, NormalizeOnesHasUnitNorm) {
  const Vector v = l2_normalize(Vector::Ones(3));
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(v[i], 0.5773502691896258, 1e-15);
    s += v[i] * v[i];
  }
  EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
}

TEST(VectorAlgebra, TensorNormalizeChecksRank) {
  EXPECT_THROW(l2_normalize(Tensor({1, 2}, {1.0, 1.0})), ShapeMismatch);
  const Tensor n = l2_normalize(Tensor({2}, {3.0, 4.0}));
  EXPECT_DOUBLE_EQ(n[1], 0.8);
}

TEST(VectorAlgebra, MeanRowsExamples) {
  Matrix a{{1.0, 0.0}, {1.0, 0.0}};
  EXPECT_EQ(mean_rows(a), Vector({{1.0, 0.0}}));
  Matrix b{{2.0, 1.0}, {0.0, 1.0}};
  EXPECT_EQ(mean_rows(b), Vector({{1.0, 1.0}}));
  EXPECT_THROW(mean_rows(Matrix(0, 3)), EmptyMatrix);
}

TEST(VectorAlgebra, MeanRowsMatchesStreamingSum) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Matrix m(500, 6);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  const Vector mean = mean_rows(m);
  for (Eigen::Index c = 0; c < 6; ++c) {
    long double sum = 0;
    for (Eigen::Index r = 0; r < 500; ++r) sum += m(r, c);
    EXPECT_NEAR(mean[c], static_cast<double>(sum / 500), 1e-12);
  }
}

TEST(VectorAlgebra, DotExamples) {
  EXPECT_EQ(dot(Vector{{1.0, 0.0}}, Vector{{0.0, 1.0}}), 0.0);
  const Vector u = l2_normalize(Vector{{1.0, 2.0, -3.0}});
  EXPECT_NEAR(dot(u, u), 1.0, 1e-12);
  EXPECT_THROW(dot(Vector::Ones(2), Vector::Ones(3)), LengthMismatch);
  EXPECT_THROW(dot(Tensor({2}, {1.0, 2.0}), Tensor({1, 2}, {1.0, 2.0})), ShapeMismatch);
}

TEST(VectorAlgebra, DotMatchesNaiveLoopExactly) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  std::vector<double> a(64), b(64);
  for (auto& x : a) x = nd(gen);
  for (auto& x : b) x = nd(gen);
  double naive = 0.0;
  for (std::size_t i = 0; i < 64; ++i) naive += a[i] * b[i];
  EXPECT_EQ(dot(Tensor({64}, a), Tensor({64}, b)), naive);
}

// Randomized properties.

TEST(TensorProperties, RoundTripIsBitExact) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rank = 1 + gen() % 4;
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + gen() % 5);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
      std::uint64_t bits = gen();
      std::memcpy(&x, &bits, 8);
      if (std::isnan(x)) x = 0.5;
    }
    const DType dt = gen() % 2 ? DType::f32 : DType::f64;
    const Tensor t(shape, v, dt, trial % 3 ? "t" + std::to_string(trial) : "");
    ASSERT_TRUE(decode_tensor(encode_tensor(t)).bit_equal(t)) << "trial " << trial;
  }
}

TEST(TensorProperties, NormalizeIsIdempotent) {
  std::mt19937_64 gen(22);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 1000; ++trial) {
    Vector v(1 + static_cast<Eigen::Index>(gen() % 50));
    for (auto& x : v) x = nd(gen) * std::pow(10.0, static_cast<double>(gen() % 9) - 4);
    const Vector once = l2_normalize(v);
    const Vector twice = l2_normalize(once);
    ASSERT_LE((once - twice).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_NEAR(once.norm(), 1.0, 1e-12);
  }
}

TEST(TensorProperties, DotSymmetricAndBilinear) {
  std::mt19937_64 gen(23);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 1 + static_cast<Eigen::Index>(gen() % 64);
    Vector a(n), b(n);
    for (auto& x : a) x = nd(gen);
    for (auto& x : b) x = nd(gen);
    const double alpha = nd(gen) * 3.0;
    ASSERT_EQ(dot(a, b), dot(b, a));
    ASSERT_NEAR(dot(Vector(alpha * a), b), alpha * dot(a, b), 1e-10);
  }
}

TEST(TensorProperties, MeanOfIdenticalRowsIsExact) {
  std::mt19937_64 gen(24);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 1000; ++trial) {
    RowVector row(1 + static_cast<Eigen::Index>(gen() % 16));
    for (auto& x : row) x = nd(gen) * 1e3;
    const Matrix m = row.replicate(1 + static_cast<Eigen::Index>(gen() % 40), 1);
    ASSERT_EQ(mean_rows(m), Vector(row.transpose()));
  }
}
