#pragma once

// Classification metrics, the frozen-encoder linear probe, ratio-trace
// summaries and the per-run record written to disk.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ogmge/data.hpp"
#include "ogmge/model.hpp"

namespace ogmge {

inline std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

/// Top-1 match rate; ties go to the lowest class index.
inline double accuracy(const Matrix& logits, std::span<const int> labels) {
  require(logits.rows() > 0, "accuracy: empty input");
  require(labels.size() == logits.rows(), "accuracy: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i)
    if (argmax_lowest(logits.row(i)) == static_cast<std::size_t>(labels[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

/// Macro mean over classes of non-interpolated average precision. For class c
/// samples are ranked by scores(:, c) descending, equal scores by sample
/// index; AP is the mean precision at the rank of each positive. Classes
/// without positives are skipped.
inline double mean_average_precision(const Matrix& scores, std::span<const int> labels) {
  require(scores.cols() >= 2, "mean_average_precision: need at least two classes");
  require(labels.size() == scores.rows() && !labels.empty(), "mean_average_precision: label count mismatch");
  std::vector<std::size_t> order(scores.rows());
  double total = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return scores(x, c) > scores(y, c); });
    std::size_t positives = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[order[r]] == static_cast<int>(c)) {
        ++positives;
        ap += static_cast<double>(positives) / static_cast<double>(r + 1);
      }
    }
    if (positives == 0) continue;
    total += ap / static_cast<double>(positives);
    ++evaluated;
  }
  require(evaluated > 0, "mean_average_precision: no class has a positive sample");
  return total / static_cast<double>(evaluated);
}

struct ProbeConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

/// Trains a fresh softmax-regression classifier on the frozen encoder's
/// features (train split, standardized with train statistics) by plain SGD
/// and returns its test accuracy.
inline double linear_probe(const EncoderParams& encoder, Modality modality, const Splits& splits,
                           const ProbeConfig& cfg) {
  require(cfg.learning_rate > 0.0 && cfg.batch_size >= 2, "linear_probe: invalid probe config");
  const std::size_t classes = splits.train.num_classes;
  auto features = [&](const MultimodalBatch& b) {
    return encoder_forward(encoder, modality == Modality::a ? b.x_a : b.x_v);
  };
  Matrix train_f = features(splits.train);
  Matrix test_f = features(splits.test);
  std::vector<double> mean, scale;
  Standardizer::fit_columns(train_f, mean, scale);
  Standardizer::apply_columns(train_f, mean, scale);
  Standardizer::apply_columns(test_f, mean, scale);

  const std::size_t d = train_f.cols();
  Matrix w(classes, d);
  std::vector<double> b(classes, 0.0);
  Rng rng = Rng(cfg.seed).split(Stream::probe);
  std::vector<double> p(classes);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : minibatches(train_f.rows(), cfg.batch_size, rng)) {
      Matrix gw(classes, d);
      std::vector<double> gb(classes, 0.0);
      for (std::size_t r : idx) {
        auto x = train_f.row(r);
        for (std::size_t c = 0; c < classes; ++c) {
          double z = b[c];
          auto wr = w.row(c);
          for (std::size_t j = 0; j < d; ++j) z += wr[j] * x[j];
          p[c] = z;
        }
        softmax_into(p, p);
        p[static_cast<std::size_t>(splits.train.labels[r])] -= 1.0;
        for (std::size_t c = 0; c < classes; ++c) {
          gb[c] += p[c];
          auto gr = gw.row(c);
          for (std::size_t j = 0; j < d; ++j) gr[j] += p[c] * x[j];
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(idx.size());
      for (std::size_t e = 0; e < w.size(); ++e) w.values()[e] -= step * gw.values()[e];
      for (std::size_t c = 0; c < classes; ++c) b[c] -= step * gb[c];
    }
  }
  Matrix logits = gemm_nt(test_f, w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t c = 0; c < classes; ++c) logits(i, c) += b[c];
  return accuracy(logits, splits.test.labels);
}

struct RatioSummary {
  double mean = 0.0;
  double max = 0.0;
  double final_window_mean = 0.0;
};

/// Statistics of a rho trace; the final window is the last 10% of steps
/// (at least one).
inline RatioSummary summarize_ratio_trace(std::span<const double> trace) {
  require(!trace.empty(), "summarize_ratio_trace: empty trace");
  RatioSummary s;
  s.max = trace[0];
  double total = 0.0;
  for (double v : trace) {
    total += v;
    s.max = std::max(s.max, v);
  }
  s.mean = total / static_cast<double>(trace.size());
  const std::size_t window = std::max<std::size_t>(1, (trace.size() + 9) / 10);
  double tail = 0.0;
  for (std::size_t i = trace.size() - window; i < trace.size(); ++i) tail += trace[i];
  s.final_window_mean = tail / static_cast<double>(window);
  return s;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct RunRecord {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json config;  // snapshot of the training config
  nlohmann::json data;    // where the splits came from
  std::vector<EpochMetrics> epochs;
  std::vector<double> loss;  // per step
  std::vector<double> rho_a;
  std::vector<double> k_a;
  std::vector<double> k_v;
  double test_accuracy = 0.0;
  double test_map = 0.0;
  std::optional<double> probe_a;
  std::optional<double> probe_v;

  std::size_t steps() const { return loss.size(); }
  double final_val_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().val_accuracy; }
};

/// Equality of everything a run produced, ignoring its name and config
/// snapshot.
inline bool same_results(const RunRecord& x, const RunRecord& y) {
  return x.seed == y.seed && x.epochs == y.epochs && x.loss == y.loss && x.rho_a == y.rho_a && x.k_a == y.k_a &&
         x.k_v == y.k_v && x.test_accuracy == y.test_accuracy && x.test_map == y.test_map &&
         x.probe_a == y.probe_a && x.probe_v == y.probe_v;
}

inline void to_json(nlohmann::json& j, const EpochMetrics& e) {
  j = {{"epoch", e.epoch},          {"learning_rate", e.learning_rate}, {"train_loss", e.train_loss},
       {"train_accuracy", e.train_accuracy}, {"val_loss", e.val_loss},   {"val_accuracy", e.val_accuracy}};
}

inline void from_json(const nlohmann::json& j, EpochMetrics& e) {
  j.at("epoch").get_to(e.epoch);
  j.at("learning_rate").get_to(e.learning_rate);
  j.at("train_loss").get_to(e.train_loss);
  j.at("train_accuracy").get_to(e.train_accuracy);
  j.at("val_loss").get_to(e.val_loss);
  j.at("val_accuracy").get_to(e.val_accuracy);
}

inline void to_json(nlohmann::json& j, const RunRecord& r) {
  j = nlohmann::json{{"name", r.name},
                     {"seed", r.seed},
                     {"config", r.config},
                     {"data", r.data},
                     {"epochs", r.epochs},
                     {"steps", {{"loss", r.loss}, {"rho_a", r.rho_a}, {"k_a", r.k_a}, {"k_v", r.k_v}}},
                     {"test", {{"accuracy", r.test_accuracy}, {"map", r.test_map}}}};
  nlohmann::json probe = nlohmann::json::object();
  probe["a"] = r.probe_a ? nlohmann::json(*r.probe_a) : nlohmann::json(nullptr);
  probe["v"] = r.probe_v ? nlohmann::json(*r.probe_v) : nlohmann::json(nullptr);
  j["probe"] = probe;
}

inline void from_json(const nlohmann::json& j, RunRecord& r) {
  j.at("name").get_to(r.name);
  j.at("seed").get_to(r.seed);
  r.config = j.at("config");
  r.data = j.at("data");
  j.at("epochs").get_to(r.epochs);
  const auto& s = j.at("steps");
  s.at("loss").get_to(r.loss);
  s.at("rho_a").get_to(r.rho_a);
  s.at("k_a").get_to(r.k_a);
  s.at("k_v").get_to(r.k_v);
  j.at("test").at("accuracy").get_to(r.test_accuracy);
  j.at("test").at("map").get_to(r.test_map);
  const auto& p = j.at("probe");
  r.probe_a = p.at("a").is_null() ? std::nullopt : std::optional<double>(p.at("a").get<double>());
  r.probe_v = p.at("v").is_null() ? std::nullopt : std::optional<double>(p.at("v").get<double>());
}

}  // namespace ogmge
