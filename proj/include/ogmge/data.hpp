#pragma once

// Paired two-modality datasets: synthetic class-conditional Gaussians with a
// tunable per-modality separation, CSV ingestion, and mini-batch sampling.

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ogmge/numkit.hpp"

namespace ogmge {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row i of x_a and x_v together with labels[i] form one sample.
struct MultimodalBatch {
  Matrix x_a;
  Matrix x_v;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    require(x_a.rows() == labels.size() && x_v.rows() == labels.size(), "batch: row counts differ");
    for (int y : labels)
      require(y >= 0 && static_cast<std::size_t>(y) < num_classes, "batch: label out of range");
  }
};

struct Splits {
  MultimodalBatch train;
  MultimodalBatch val;
  MultimodalBatch test;
};

struct SyntheticSpec {
  std::size_t num_classes = 6;
  std::size_t dim_a = 16;
  std::size_t dim_v = 16;
  double separation_a = 2.0;
  double separation_v = 0.8;
  double noise_std = 1.0;
  double label_noise = 0.0;
  std::size_t n_train = 1800;
  std::size_t n_val = 200;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_classes >= 2, "synthetic: need at least two classes");
    require(dim_a >= num_classes && dim_v >= num_classes, "synthetic: feature dims must be at least the class count");
    require(separation_a >= 0.0 && separation_v >= 0.0, "synthetic: separations must be non-negative");
    require(noise_std > 0.0, "synthetic: noise_std must be positive");
    require(label_noise >= 0.0 && label_noise < 1.0, "synthetic: label_noise must lie in [0, 1)");
    require(n_train > 0 && n_val > 0 && n_test > 0, "synthetic: split sizes must be positive");
  }
};

/// Per-column affine map fitted on one split and frozen.
struct Standardizer {
  std::vector<double> mean_a, scale_a, mean_v, scale_v;

  static void fit_columns(const Matrix& x, std::vector<double>& mean, std::vector<double>& scale) {
    mean.assign(x.cols(), 0.0);
    scale.assign(x.cols(), 1.0);
    if (x.rows() == 0) return;
    const double n = static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= n;
    std::vector<double> var(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt(var[j] / n);
      scale[j] = sd > 0.0 ? sd : 1.0;
    }
  }

  static Standardizer fit(const MultimodalBatch& train) {
    Standardizer s;
    fit_columns(train.x_a, s.mean_a, s.scale_a);
    fit_columns(train.x_v, s.mean_v, s.scale_v);
    return s;
  }

  static void apply_columns(Matrix& x, const std::vector<double>& mean, const std::vector<double>& scale) {
    require(x.cols() == mean.size(), "standardizer: width mismatch");
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) = (x(i, j) - mean[j]) / scale[j];
  }

  void apply(MultimodalBatch& b) const {
    apply_columns(b.x_a, mean_a, scale_a);
    apply_columns(b.x_v, mean_v, scale_v);
  }
};

/// Fits on train and applies the same transform to every split.
inline void standardize(Splits& s) {
  const auto st = Standardizer::fit(s.train);
  st.apply(s.train);
  st.apply(s.val);
  st.apply(s.test);
}

/// Class c has mean separation_u * e_c in modality u (one simplex corner per
/// class) plus isotropic noise. Draws do not depend on the separations, so
/// two specs differing only in separation share a noise realization.
inline Splits generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).split(Stream::data);
  const std::size_t total = spec.n_train + spec.n_val + spec.n_test;
  MultimodalBatch all;
  all.num_classes = spec.num_classes;
  all.x_a = Matrix(total, spec.dim_a);
  all.x_v = Matrix(total, spec.dim_v);
  all.labels.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = rng.below(spec.num_classes);
    for (std::size_t j = 0; j < spec.dim_a; ++j)
      all.x_a(i, j) = (j == c ? spec.separation_a : 0.0) + spec.noise_std * rng.normal();
    for (std::size_t j = 0; j < spec.dim_v; ++j)
      all.x_v(i, j) = (j == c ? spec.separation_v : 0.0) + spec.noise_std * rng.normal();
    const bool flip = rng.uniform() < spec.label_noise;
    const std::size_t resampled = rng.below(spec.num_classes);
    all.labels[i] = static_cast<int>(flip ? resampled : c);
  }

  auto slice = [&](std::size_t begin, std::size_t count) {
    MultimodalBatch b;
    b.num_classes = spec.num_classes;
    b.x_a = Matrix(count, spec.dim_a);
    b.x_v = Matrix(count, spec.dim_v);
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(all.x_a.row(begin + i).begin(), spec.dim_a, b.x_a.row(i).begin());
      std::copy_n(all.x_v.row(begin + i).begin(), spec.dim_v, b.x_v.row(i).begin());
      b.labels.push_back(all.labels[begin + i]);
    }
    return b;
  };
  Splits s{slice(0, spec.n_train), slice(spec.n_train, spec.n_val), slice(spec.n_train + spec.n_val, spec.n_test)};
  standardize(s);
  return s;
}

/// Rows `indices` of `src`, in that order.
inline MultimodalBatch gather(const MultimodalBatch& src, std::span<const std::size_t> indices) {
  MultimodalBatch b;
  b.num_classes = src.num_classes;
  b.x_a = Matrix(indices.size(), src.x_a.cols());
  b.x_v = Matrix(indices.size(), src.x_v.cols());
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    require(r < src.size(), "gather: index out of range");
    std::copy_n(src.x_a.row(r).begin(), src.x_a.cols(), b.x_a.row(i).begin());
    std::copy_n(src.x_v.row(r).begin(), src.x_v.cols(), b.x_v.row(i).begin());
    b.labels.push_back(src.labels[r]);
  }
  return b;
}

/// One epoch: a random permutation cut into consecutive batches of m. A
/// trailing batch smaller than 2 is dropped.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t m, Rng& rng) {
  require(m >= 2, "minibatches: batch size must be at least 2");
  require(n >= 2, "minibatches: split must hold at least 2 samples");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += m) {
    const std::size_t end = std::min(n, start + m);
    if (end - start < 2) break;
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads `label,a_0..a_{da-1},v_0..v_{dv-1}`. The class count is one past the
/// largest label seen.
inline MultimodalBatch load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": no data rows");
  const auto header = detail::split_commas(detail::trim(line));
  if (header.empty() || detail::trim(header[0]) != "label")
    throw DataError(path + ":1: header must start with 'label'");
  std::size_t dim_a = 0, dim_v = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto h = detail::trim(header[c]);
    const bool is_a = h.starts_with("a_");
    const bool is_v = h.starts_with("v_");
    const std::size_t expect = is_a ? dim_a : dim_v;
    if ((!is_a && !is_v) || h.substr(2) != std::to_string(expect))
      throw DataError(path + ":1: unexpected header column '" + std::string(h) + "'");
    if (is_a && dim_v > 0) throw DataError(path + ":1: a_ columns must precede v_ columns");
    (is_a ? dim_a : dim_v) += 1;
  }
  if (dim_a == 0 || dim_v == 0) throw DataError(path + ":1: need at least one a_ and one v_ column");

  std::vector<double> xa, xv;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto fields = detail::split_commas(t);
    if (fields.size() != 1 + dim_a + dim_v)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(1 + dim_a + dim_v) +
                      " fields, got " + std::to_string(fields.size()));
    const auto lf = detail::trim(fields[0]);
    int y = 0;
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), y);
    if (lec != std::errc() || lp != lf.data() + lf.size() || y < 0)
      throw DataError(path + ":" + std::to_string(line_no) + ": bad label '" + std::string(lf) + "'");
    labels.push_back(y);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto f = detail::trim(fields[c]);
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
        throw DataError(path + ":" + std::to_string(line_no) + ": bad value '" + std::string(f) + "' in column " +
                        std::to_string(c + 1));
      (c <= dim_a ? xa : xv).push_back(v);
    }
  }
  if (labels.empty()) throw DataError(path + ": no data rows");
  MultimodalBatch b;
  b.x_a = Matrix(labels.size(), dim_a, std::move(xa));
  b.x_v = Matrix(labels.size(), dim_v, std::move(xv));
  int max_label = 0;
  for (int y : labels) max_label = std::max(max_label, y);
  b.num_classes = static_cast<std::size_t>(max_label) + 1;
  b.labels = std::move(labels);
  return b;
}

/// Shortest round-trip decimal formatting, so load_csv(write_csv(b)) == b.
inline void write_csv(const std::string& path, const MultimodalBatch& b) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "label";
  for (std::size_t j = 0; j < b.x_a.cols(); ++j) out << ",a_" << j;
  for (std::size_t j = 0; j < b.x_v.cols(); ++j) out << ",v_" << j;
  out << '\n';
  for (std::size_t i = 0; i < b.size(); ++i) {
    out << b.labels[i];
    for (double v : b.x_a.row(i)) out << ',' << detail::format_double(v);
    for (double v : b.x_v.row(i)) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

}  // namespace ogmge
