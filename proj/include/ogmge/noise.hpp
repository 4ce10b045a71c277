#pragma once

// Generalization enhancement: a diagonal estimate of the mini-batch gradient
// noise covariance and fresh Gaussian noise drawn with that covariance.

#include <cmath>
#include <span>
#include <vector>

#include "ogmge/model.hpp"

namespace ogmge {

/// Per-entry variance of the mini-batch gradient, one vector per parameter
/// tensor in canonical order.
struct NoiseEstimate {
  std::vector<std::vector<double>> variance;
  std::size_t batch_size = 0;
};

/// Per entry: (1/m) * (mean_i g_i^2 - gbar^2), clamped at zero. The batch
/// stands in for the population, so this is the noise of a size-m batch mean.
inline NoiseEstimate estimate_covariance_diag(std::span<const Matrix> per_sample,
                                              std::span<const std::vector<double>> mean, std::size_t m) {
  require(m >= 2, "estimate_covariance_diag: batch size must be at least 2");
  require(!per_sample.empty(), "estimate_covariance_diag: empty gradient stack");
  require(per_sample.size() == mean.size(), "estimate_covariance_diag: tensor count mismatch");
  NoiseEstimate est;
  est.batch_size = m;
  est.variance.reserve(per_sample.size());
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t t = 0; t < per_sample.size(); ++t) {
    const Matrix& stack = per_sample[t];
    require(stack.rows() > 0, "estimate_covariance_diag: empty gradient stack");
    require(stack.cols() == mean[t].size(), "estimate_covariance_diag: mean shape does not match stack");
    const double inv_n = 1.0 / static_cast<double>(stack.rows());
    std::vector<double> second(stack.cols(), 0.0);
    for (std::size_t i = 0; i < stack.rows(); ++i) {
      auto g = stack.row(i);
      for (std::size_t e = 0; e < g.size(); ++e) second[e] += g[e] * g[e];
    }
    for (std::size_t e = 0; e < second.size(); ++e) {
      const double v = (second[e] * inv_n - mean[t][e] * mean[t][e]) * inv_m;
      second[e] = v > 0.0 ? v : 0.0;
    }
    est.variance.push_back(std::move(second));
  }
  return est;
}

inline NoiseEstimate estimate_covariance_diag(const GradientBundle& grads) {
  require(grads.has_per_sample(), "estimate_covariance_diag: bundle has no per-sample gradients");
  std::vector<std::vector<double>> mean;
  for (const auto& t : grads.mean.tensors()) mean.emplace_back(t.values.begin(), t.values.end());
  return estimate_covariance_diag(grads.per_sample, mean, grads.batch_size);
}

/// One draw of h ~ N(0, diag(variance)) per tensor.
inline std::vector<std::vector<double>> sample_ge_noise(const NoiseEstimate& estimate, Rng& rng) {
  std::vector<std::vector<double>> out;
  out.reserve(estimate.variance.size());
  std::vector<double> stddev;
  for (const auto& var : estimate.variance) {
    stddev.resize(var.size());
    for (std::size_t e = 0; e < var.size(); ++e) stddev[e] = std::sqrt(var[e]);
    Matrix h = sample_gaussian(1, var.size(), 0.0, stddev, rng);
    out.emplace_back(h.values().begin(), h.values().end());
  }
  return out;
}

/// Predicted variance of k*xi + eps for independent xi, eps ~ N(0, var).
inline double combined_update_variance(double k, double variance) {
  require(k > 0.0 && k <= 1.0, "combined_update_variance: k must lie in (0, 1]");
  return (k * k + 1.0) * variance;
}

inline std::vector<std::vector<double>> combined_update_variance(double k, const NoiseEstimate& estimate) {
  auto out = estimate.variance;
  for (auto& var : out)
    for (double& v : var) v = combined_update_variance(k, v);
  return out;
}

/// Learning rate over batch size, the quantity SGD noise scales with.
inline double noise_intensity(double learning_rate, double batch_size) {
  require(learning_rate > 0.0 && batch_size > 0.0, "noise_intensity: inputs must be positive");
  return learning_rate / batch_size;
}

}  // namespace ogmge
