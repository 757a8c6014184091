#pragma once

// Dense row-major matrices, deterministic RNG, stable scalar activations and
// the little-endian binary fixture format shared by every other header.
//
// Storage precision is a template parameter. Every reduction accumulates in
// double regardless of storage type, in a fixed sequential order.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gfwa {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length does not match rows x cols");
    }
  }

  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    BasicMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged initializer");
      std::copy(row.begin(), row.end(), m.row(i++).begin());
    }
    return m;
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  static BasicMatrix column(std::span<const T> values) {
    return BasicMatrix(values.size(), 1, std::vector<T>(values.begin(), values.end()));
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  [[nodiscard]] BasicMatrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicMatrix<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

template <typename T>
bool all_finite(const BasicMatrix<T>& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](T v) { return std::isfinite(static_cast<double>(v)); });
}

template <typename T>
void require_finite(const BasicMatrix<T>& m, const char* what) {
  if (!all_finite(m)) throw NumericError(std::string("non-finite entry in ") + what);
}

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require_shape(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  BasicMatrix<T> out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  require_finite(out, "matmul result");
  return out;
}

// a^T b without forming the transpose.
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn: a.rows != b.rows");
  BasicMatrix<double> acc(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      for (std::size_t j = 0; j < b.cols(); ++j) acc(i, j) += aki * static_cast<double>(brow[j]);
    }
  }
  return acc.template cast<T>();
}

// a b^T without forming the transpose.
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt: a.cols != b.cols");
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<double>(arow[k]) * brow[k];
      out(i, j) = static_cast<T>(s);
    }
  }
  return out;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

template <typename T, typename F>
BasicMatrix<T> zip_with(const BasicMatrix<T>& a, const BasicMatrix<T>& b, F&& f) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "elementwise shape mismatch");
  BasicMatrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = f(a.values()[i], b.values()[i]);
  return out;
}

template <typename T>
BasicMatrix<T> operator+(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return zip_with(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
BasicMatrix<T> operator-(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return zip_with(a, b, [](T x, T y) { return x - y; });
}

template <typename T>
BasicMatrix<T> hadamard(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return zip_with(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
BasicMatrix<T> scaled(const BasicMatrix<T>& a, double s) {
  BasicMatrix<T> out = a;
  for (auto& v : out.values()) v = static_cast<T>(v * s);
  return out;
}

template <typename T>
BasicMatrix<T> rowmax(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    out(i, 0) = r.empty() ? -std::numeric_limits<T>::infinity() : *std::max_element(r.begin(), r.end());
  }
  return out;
}

template <typename T>
BasicMatrix<T> rowsum(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (T v : m.row(i)) s += v;
    out(i, 0) = static_cast<T>(s);
  }
  return out;
}

template <typename T>
BasicMatrix<T> colsum(const BasicMatrix<T>& m) {
  std::vector<double> acc(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) acc[j] += m(i, j);
  BasicMatrix<T> out(1, m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) = static_cast<T>(acc[j]);
  return out;
}

template <typename T>
double frobenius_norm(const BasicMatrix<T>& m) {
  double s = 0.0;
  for (T v : m.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

template <typename T>
double max_abs(const BasicMatrix<T>& m) {
  double s = 0.0;
  for (T v : m.values()) s = std::max(s, std::abs(static_cast<double>(v)));
  return s;
}

template <typename A, typename B>
double max_abs_diff(const BasicMatrix<A>& a, const BasicMatrix<B>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s = std::max(s, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
  }
  return s;
}

// Max-norm relative error of `a` against `reference`: max|a-ref| / max|ref|.
// An all-zero reference falls back to the absolute error.
template <typename A, typename B>
double max_rel_error(const BasicMatrix<A>& a, const BasicMatrix<B>& reference) {
  const double scale = max_abs(reference);
  const double diff = max_abs_diff(a, reference);
  return scale > 0.0 ? diff / scale : diff;
}

template <typename A, typename B>
double max_rel_error(std::span<const A> a, std::span<const B> reference) {
  require_shape(a.size() == reference.size(), "max_rel_error length mismatch");
  double scale = 0.0;
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(static_cast<double>(reference[i])));
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(reference[i])));
  }
  return scale > 0.0 ? diff / scale : diff;
}

// Convenience for vectors and spans of double without explicit template arguments.
inline double max_rel_error_d(std::span<const double> a, std::span<const double> reference) {
  return max_rel_error<double, double>(a, reference);
}

// Ordinary least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  require_shape(x.size() == y.size() && x.size() >= 2, "loglog_slope needs >= 2 paired points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw NumericError("loglog_slope needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw NumericError("loglog_slope needs distinct x values");
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Scalar activations

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// nu + log(exp(z - nu) + exp(-nu)) with nu = max(z, 0). One of the two
// exponentials is always exactly 1, so the sum is evaluated with log1p to keep
// the e^z tail for very negative z.
inline double softplus_safe(double z) noexcept {
  const double nu = std::max(z, 0.0);
  return nu + std::log1p(std::exp(-std::abs(z)));
}

inline double elu(double z) noexcept { return z >= 0.0 ? z : std::expm1(z); }
inline double elu_grad(double z) noexcept { return z >= 0.0 ? 1.0 : std::exp(z); }
inline double swish(double z) noexcept { return z * sigmoid(z); }

inline double swish_grad(double z) noexcept {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

template <typename T, typename F>
BasicMatrix<T> map(const BasicMatrix<T>& m, F&& f) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.values()[i] = static_cast<T>(f(static_cast<double>(m.values()[i])));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. Distributions are derived from raw 64-bit draws so the
// stream is identical across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  // splitmix64
  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T = float>
BasicMatrix<T> random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  BasicMatrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return m;
}

template <typename T = float>
BasicMatrix<T> random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  BasicMatrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(stddev * rng.normal());
  return m;
}

// ---------------------------------------------------------------------------
// Binary fixtures: "GFWA" | version u32 | rows u32 | cols u32 | f32 row-major,
// all little-endian.

inline constexpr std::uint32_t kFixtureVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

template <typename T>
std::vector<unsigned char> encode_fixture(const BasicMatrix<T>& m) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) throw FormatError("fixture too large");
  std::vector<unsigned char> out = {'G', 'F', 'W', 'A'};
  out.reserve(16 + 4 * m.size());
  detail::put_u32(out, kFixtureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (T v : m.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Matrix decode_fixture(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "GFWA", 4) != 0) {
    throw FormatError("fixture: bad magic");
  }
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kFixtureVersion) throw FormatError("fixture: unsupported version");
  const std::size_t rows = detail::get_u32(bytes.data() + 8);
  const std::size_t cols = detail::get_u32(bytes.data() + 12);
  if (bytes.size() != 16 + 4 * rows * cols) throw FormatError("fixture: truncated payload");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.values()[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + 16 + 4 * i));
  }
  return m;
}

template <typename T>
void write_fixture(const std::string& path, const BasicMatrix<T>& m) {
  const auto bytes = encode_fixture(m);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open fixture for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Matrix read_fixture(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open fixture: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_fixture(bytes);
}

}  // namespace gfwa
