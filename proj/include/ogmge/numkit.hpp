#pragma once

// Dense numeric kernels shared by the rest of the library: a row-major
// double matrix, the three matrix products backprop needs, a stabilized
// softmax and a splittable deterministic random stream.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ogmge {

/// Raised when a caller breaks a documented precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "Matrix: data length must equal rows*cols");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require(r.size() == cols_, "Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b
inline Matrix gemm(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "gemm: a.cols must equal b.rows");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < br.size(); ++j) o[j] += s * br[j];
    }
  }
  return out;
}

/// a^T * b
inline Matrix gemm_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "gemm_tn: a.rows must equal b.rows");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double s = ar[i];
      if (s == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) o[j] += s * br[j];
    }
  }
  return out;
}

/// a * b^T
inline Matrix gemm_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "gemm_nt: a.cols must equal b.cols");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

/// Writes softmax(logits) into out. Max-subtracted, so large inputs saturate
/// instead of overflowing.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  require(logits.size() == out.size() && !logits.empty(), "softmax: size mismatch");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax_into(logits, out);
  return out;
}

/// Row-wise softmax.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) softmax_into(logits.row(i), out.row(i));
  return out;
}

/// log(sum(exp(z))), stabilized.
inline double log_sum_exp(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - mx);
  return mx + std::log(total);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named consumers of randomness. Each gets its own stream derived from the
/// run seed, so toggling one consumer never shifts another's draws.
enum class Stream : std::uint64_t {
  data = 1,
  init = 2,
  batches = 3,
  noise = 4,
  dropout = 5,
  probe = 6,
  aux = 7,
};

/// Deterministic random stream. mt19937_64 is bit-specified by the standard;
/// the distributions on top are hand-written because std:: distributions are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent child stream for `stream`.
  Rng split(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream * 0xd1342543de82ef95ULL + 1)));
  }
  Rng split(Stream stream) const { return split(static_cast<std::uint64_t>(stream)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// rows x cols matrix of independent normals with entry (i, j) drawn from
/// N(mean, std_per_entry[i*cols + j]^2).
inline Matrix sample_gaussian(std::size_t rows, std::size_t cols, double mean,
                              std::span<const double> std_per_entry, Rng& rng) {
  require(std_per_entry.size() == rows * cols, "sample_gaussian: std length must match shape");
  Matrix out(rows, cols);
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = std_per_entry[i];
    require(s >= 0.0, "sample_gaussian: negative standard deviation");
    const double z = rng.normal();
    v[i] = mean + s * z;
  }
  return out;
}

}  // namespace ogmge
