#pragma once

// On-the-fly gradient modulation: per-batch contribution scores of each
// modality's approximate prediction, their discrepancy ratio, and the
// resulting gradient coefficients.

#include <cmath>
#include <span>

#include "ogmge/model.hpp"

namespace ogmge {

struct UnimodalScores {
  double sum_a = 0.0;
  double sum_v = 0.0;
};

struct DiscrepancyRatio {
  double rho_v = 1.0;
  double rho_a = 1.0;
};

struct ModulationState {
  double s_sum_a = 0.0;
  double s_sum_v = 0.0;
  double rho_a = 1.0;
  double rho_v = 1.0;
  double k_a = 1.0;
  double k_v = 1.0;
  double alpha = 0.0;

  double k(Modality m) const { return m == Modality::a ? k_a : k_v; }
};

/// Batch sums of the true-class probability under softmax(W_u f_u + b/2).
inline UnimodalScores unimodal_scores(const FusionHead& head, const Matrix& f_a, const Matrix& f_v,
                                      std::span<const int> labels) {
  require(!labels.empty(), "unimodal_scores: empty batch");
  const Matrix za = unimodal_logits(head, f_a, Modality::a);
  const Matrix zv = unimodal_logits(head, f_v, Modality::v);
  check_labels(labels, head.num_classes(), za.rows());
  check_labels(labels, head.num_classes(), zv.rows());
  std::vector<double> p(head.num_classes());
  UnimodalScores s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    softmax_into(za.row(i), p);
    s.sum_a += p[y];
    softmax_into(zv.row(i), p);
    s.sum_v += p[y];
  }
  return s;
}

/// rho_v = s_v / s_a and rho_a = 1 / rho_v.
inline DiscrepancyRatio discrepancy_ratio(double s_sum_a, double s_sum_v) {
  require(s_sum_a > 0.0 && s_sum_v > 0.0, "discrepancy_ratio: score sums must be positive");
  DiscrepancyRatio r;
  r.rho_v = s_sum_v / s_sum_a;
  r.rho_a = 1.0 / r.rho_v;
  return r;
}

/// 1 - tanh(alpha * rho) when rho > 1 (strictly), else 1. Evaluated as
/// 2 / (1 + exp(2 alpha rho)), which stays positive where 1 - tanh rounds to 0.
inline double modulation_coefficient(double rho, double alpha) {
  require(rho > 0.0, "modulation_coefficient: rho must be positive");
  require(alpha >= 0.0, "modulation_coefficient: alpha must be non-negative");
  return rho > 1.0 ? 2.0 / (1.0 + std::exp(2.0 * alpha * rho)) : 1.0;
}

/// Scores, ratios and coefficients for one batch, from the features of the
/// forward pass that also produces the loss.
inline ModulationState compute_modulation(const FusionHead& head, const Matrix& f_a, const Matrix& f_v,
                                          std::span<const int> labels, double alpha) {
  const auto s = unimodal_scores(head, f_a, f_v, labels);
  const auto r = discrepancy_ratio(s.sum_a, s.sum_v);
  ModulationState st;
  st.s_sum_a = s.sum_a;
  st.s_sum_v = s.sum_v;
  st.rho_a = r.rho_a;
  st.rho_v = r.rho_v;
  st.alpha = alpha;
  st.k_a = modulation_coefficient(r.rho_a, alpha);
  st.k_v = modulation_coefficient(r.rho_v, alpha);
  return st;
}

}  // namespace ogmge
