#pragma once

// Training loop with on-the-fly gradient modulation (OGM) and generalization
// enhancement noise (GE), plus the joint-training and modality-dropout
// baselines. Each step:
//   forward -> ratio rho and coefficients k from the same forward pass
//   -> backward -> (GE) per-entry noise variance from per-sample gradients
//   -> theta <- theta - lr * optimizer(k * (g + wd * theta) + h)

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ogmge/data.hpp"
#include "ogmge/eval.hpp"
#include "ogmge/model.hpp"
#include "ogmge/modulation.hpp"
#include "ogmge/noise.hpp"

namespace ogmge {

/// Non-finite loss or gradient. The message names the offending tensor.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Strategy { joint, ogm, ogm_ge, modality_dropout };
enum class OptimizerKind { sgd, adam };

/// Which tensors of modality u the coefficient k_u (and GE noise) touch.
enum class ModulationScope {
  encoder_and_head,  // theta_u and the head block W_u
  encoder_only,      // theta_u only
};

NLOHMANN_JSON_SERIALIZE_ENUM(Strategy, {{Strategy::joint, "joint"},
                                        {Strategy::ogm, "ogm"},
                                        {Strategy::ogm_ge, "ogm_ge"},
                                        {Strategy::modality_dropout, "modality_dropout"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::sgd, "sgd"}, {OptimizerKind::adam, "adam"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ModulationScope, {{ModulationScope::encoder_and_head, "encoder_and_head"},
                                               {ModulationScope::encoder_only, "encoder_only"}})
NLOHMANN_JSON_SERIALIZE_ENUM(FusionMode,
                             {{FusionMode::concatenation, "concatenation"}, {FusionMode::summation, "summation"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Modality, {{Modality::a, "a"}, {Modality::v, "v"}})

struct TrainConfig {
  std::string name = "run";
  Strategy strategy = Strategy::joint;
  FusionMode fusion = FusionMode::concatenation;
  double alpha = 0.1;
  bool ge = true;  // read only by ogm_ge
  ModulationScope scope = ModulationScope::encoder_and_head;

  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay = 0.1;
  std::size_t lr_decay_period = 70;  // epochs; 0 disables the schedule
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  double dropout_p = 0.5;
  Modality dropout_modality = Modality::a;

  // Layer widths after the input, the last one being the feature dim.
  std::vector<std::size_t> encoder_a = {32, 16};
  std::vector<std::size_t> encoder_v = {32, 16};

  bool probe = false;
  ProbeConfig probe_config;

  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0.0, "config: learning_rate must be positive");
    require(batch_size >= 2, "config: batch_size must be at least 2");
    require(alpha >= 0.0, "config: alpha must be non-negative");
    require(dropout_p >= 0.0 && dropout_p <= 1.0, "config: dropout_p must lie in [0, 1]");
    require(momentum >= 0.0 && momentum < 1.0, "config: momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "config: weight_decay must be non-negative");
    require(lr_decay > 0.0, "config: lr_decay must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "config: Adam betas must lie in [0, 1)");
    require(adam_eps > 0.0, "config: adam_eps must be positive");
    require(!encoder_a.empty() && !encoder_v.empty(), "config: encoders need at least one layer");
    for (auto w : encoder_a) require(w > 0, "config: encoder widths must be positive");
    for (auto w : encoder_v) require(w > 0, "config: encoder widths must be positive");
  }

  bool modulates() const { return strategy == Strategy::ogm || strategy == Strategy::ogm_ge; }
  bool uses_ge() const { return strategy == Strategy::ogm_ge && ge; }

  /// Learning rate in effect during `epoch` (0-based).
  double learning_rate_at(std::size_t epoch) const {
    if (lr_decay_period == 0) return learning_rate;
    return learning_rate * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_period));
  }
};

inline void to_json(nlohmann::json& j, const ProbeConfig& p) {
  j = {{"learning_rate", p.learning_rate}, {"epochs", p.epochs}, {"batch_size", p.batch_size}, {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, ProbeConfig& p) {
  j.at("learning_rate").get_to(p.learning_rate);
  j.at("epochs").get_to(p.epochs);
  j.at("batch_size").get_to(p.batch_size);
  j.at("seed").get_to(p.seed);
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, name, strategy, fusion, alpha, ge, scope, optimizer, learning_rate,
                                   batch_size, epochs, momentum, weight_decay, lr_decay, lr_decay_period, beta1,
                                   beta2, adam_eps, dropout_p, dropout_modality, encoder_a, encoder_v, probe,
                                   probe_config, seed)

/// Momentum buffers (SGD) or first/second moments (Adam), one per tensor in
/// canonical order.
struct OptimizerState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;

  void ensure(const ModelParams& model) {
    if (!first.empty()) return;
    for (const auto& t : model.tensors()) {
      first.emplace_back(t.values.size(), 0.0);
      second.emplace_back(t.values.size(), 0.0);
    }
  }
};

/// d = k * (g + wd * theta) + h;  buf = momentum * buf + d;  theta -= lr * buf.
/// With momentum 0 the buffer is bypassed. `h` may be empty (no noise).
inline void sgd_update(std::span<double> param, std::span<const double> grad, double k, std::span<const double> h,
                       double lr, double momentum, double weight_decay, std::span<double> buffer) {
  require(grad.size() == param.size() && buffer.size() == param.size(), "sgd_update: shape mismatch");
  require(h.empty() || h.size() == param.size(), "sgd_update: noise shape mismatch");
  for (std::size_t e = 0; e < param.size(); ++e) {
    double d = k * (grad[e] + weight_decay * param[e]);
    if (!h.empty()) d += h[e];
    if (momentum != 0.0) {
      buffer[e] = momentum * buffer[e] + d;
      d = buffer[e];
    }
    param[e] -= lr * d;
  }
}

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Standard bias-corrected Adam on the effective gradient k * (g + wd * theta) + h.
/// `step` is the 1-based count of updates including this one.
inline void adam_update(std::span<double> param, std::span<const double> grad, double k, std::span<const double> h,
                        double lr, const AdamSettings& s, std::span<double> m1, std::span<double> m2,
                        std::size_t step) {
  require(grad.size() == param.size() && m1.size() == param.size() && m2.size() == param.size(),
          "adam_update: shape mismatch");
  require(h.empty() || h.size() == param.size(), "adam_update: noise shape mismatch");
  require(step >= 1, "adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  for (std::size_t e = 0; e < param.size(); ++e) {
    double d = k * (grad[e] + s.weight_decay * param[e]);
    if (!h.empty()) d += h[e];
    m1[e] = s.beta1 * m1[e] + (1.0 - s.beta1) * d;
    m2[e] = s.beta2 * m2[e] + (1.0 - s.beta2) * d * d;
    param[e] -= lr * (m1[e] / c1) / (std::sqrt(m2[e] / c2) + s.eps);
  }
}

/// Zeroes the chosen modality's features in each sample independently with
/// probability p. Labels are untouched.
inline MultimodalBatch apply_modality_dropout(const MultimodalBatch& batch, double p, Modality modality, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, "apply_modality_dropout: p must lie in [0, 1]");
  MultimodalBatch out = batch;
  Matrix& x = modality == Modality::a ? out.x_a : out.x_v;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (rng.uniform() < p)
      for (double& v : x.row(i)) v = 0.0;
  return out;
}

/// The per-consumer random streams of one run.
struct TrainStreams {
  Rng batches;
  Rng noise;
  Rng dropout;

  explicit TrainStreams(std::uint64_t seed)
      : batches(Rng(seed).split(Stream::batches)),
        noise(Rng(seed).split(Stream::noise)),
        dropout(Rng(seed).split(Stream::dropout)) {}
};

/// Everything that went into one update, for replaying it independently.
struct StepDetail {
  ModelParams gradient;                      // raw batch-mean gradient
  std::vector<double> k;                     // coefficient applied, per tensor
  std::vector<std::vector<double>> noise;    // h per tensor (empty when GE is off)
};

struct StepResult {
  double loss = 0.0;
  ModulationState modulation;
  std::optional<StepDetail> detail;
};

namespace detail {

inline bool in_scope(const ModelParams::TensorRef<double>& t, ModulationScope scope) {
  if (t.owner == Owner::shared) return false;
  return t.is_encoder || scope == ModulationScope::encoder_and_head;
}

inline void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v)
    if (!std::isfinite(x)) throw TrainingAborted("non-finite value in " + what);
}

}  // namespace detail

/// One iteration of the training loop on `batch` at learning rate `lr`.
inline StepResult train_step(ModelParams& model, const MultimodalBatch& batch, const TrainConfig& cfg,
                             OptimizerState& state, TrainStreams& streams, double lr, bool keep_detail = false) {
  std::optional<MultimodalBatch> dropped;
  if (cfg.strategy == Strategy::modality_dropout)
    dropped = apply_modality_dropout(batch, cfg.dropout_p, cfg.dropout_modality, streams.dropout);
  const MultimodalBatch& b = dropped ? *dropped : batch;

  const ForwardPass fp = forward(model, b.x_a, b.x_v);
  StepResult result;
  result.loss = cross_entropy(fp.logits, b.labels);
  if (!std::isfinite(result.loss)) throw TrainingAborted("non-finite value in loss");

  result.modulation = compute_modulation(model.head, fp.f_a, fp.f_v, b.labels, cfg.modulates() ? cfg.alpha : 0.0);
  if (!cfg.modulates()) {
    result.modulation.k_a = 1.0;
    result.modulation.k_v = 1.0;
  }

  const bool ge = cfg.uses_ge();
  const GradientBundle grads = backward(model, fp, loss_grad_logits(fp.logits, b.labels), ge);
  for (const auto& t : grads.mean.tensors()) detail::check_finite(t.values, "gradient of " + t.name);

  std::vector<std::vector<double>> noise;
  if (ge) noise = sample_ge_noise(estimate_covariance_diag(grads), streams.noise);

  state.ensure(model);
  ++state.step;
  auto params = model.tensors();
  const auto g = grads.mean.tensors();
  if (keep_detail) result.detail = StepDetail{grads.mean, {}, {}};
  const AdamSettings adam{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  for (std::size_t t = 0; t < params.size(); ++t) {
    const bool scoped = detail::in_scope(params[t], cfg.scope);
    const double k = !scoped ? 1.0 : (params[t].owner == Owner::a ? result.modulation.k_a : result.modulation.k_v);
    std::span<const double> h;
    if (ge && scoped) h = noise[t];
    if (cfg.optimizer == OptimizerKind::sgd)
      sgd_update(params[t].values, g[t].values, k, h, lr, cfg.momentum, cfg.weight_decay, state.first[t]);
    else
      adam_update(params[t].values, g[t].values, k, h, lr, adam, state.first[t], state.second[t], state.step);
    if (keep_detail) {
      result.detail->k.push_back(k);
      result.detail->noise.emplace_back(h.begin(), h.end());
    }
  }
  return result;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  Matrix logits;
};

inline Evaluation evaluate(const ModelParams& model, const MultimodalBatch& split) {
  Evaluation e;
  e.logits = forward(model, split.x_a, split.x_v).logits;
  e.loss = cross_entropy(e.logits, split.labels);
  e.accuracy = accuracy(e.logits, split.labels);
  return e;
}

inline ModelParams init_model(const TrainConfig& cfg, const MultimodalBatch& train) {
  std::vector<std::size_t> dims_a{train.x_a.cols()};
  std::vector<std::size_t> dims_v{train.x_v.cols()};
  dims_a.insert(dims_a.end(), cfg.encoder_a.begin(), cfg.encoder_a.end());
  dims_v.insert(dims_v.end(), cfg.encoder_v.begin(), cfg.encoder_v.end());
  Rng rng = Rng(cfg.seed).split(Stream::init);
  return init_model(dims_a, dims_v, train.num_classes, cfg.fusion, rng);
}

struct TrainResult {
  ModelParams model;
  RunRecord record;
};

/// Runs cfg.epochs epochs from `model` and fills a RunRecord. epochs == 0
/// leaves the model untouched.
inline TrainResult train(const Splits& splits, const TrainConfig& cfg, ModelParams model) {
  cfg.validate();
  splits.train.validate();
  splits.val.validate();
  splits.test.validate();
  model.validate();
  TrainStreams streams(cfg.seed);
  OptimizerState state;

  RunRecord rec;
  rec.name = cfg.name;
  rec.seed = cfg.seed;
  rec.config = cfg;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    double loss_sum = 0.0;
    std::size_t n_steps = 0;
    for (const auto& idx : minibatches(splits.train.size(), cfg.batch_size, streams.batches)) {
      const auto step = train_step(model, gather(splits.train, idx), cfg, state, streams, lr);
      rec.loss.push_back(step.loss);
      rec.rho_a.push_back(step.modulation.rho_a);
      rec.k_a.push_back(step.modulation.k_a);
      rec.k_v.push_back(step.modulation.k_v);
      loss_sum += step.loss;
      ++n_steps;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.learning_rate = lr;
    em.train_loss = loss_sum / static_cast<double>(n_steps);
    em.train_accuracy = evaluate(model, splits.train).accuracy;
    const auto val = evaluate(model, splits.val);
    em.val_loss = val.loss;
    em.val_accuracy = val.accuracy;
    rec.epochs.push_back(em);
  }

  const auto test = evaluate(model, splits.test);
  rec.test_accuracy = test.accuracy;
  rec.test_map = mean_average_precision(softmax_rows(test.logits), splits.test.labels);
  if (cfg.probe) {
    ProbeConfig pc = cfg.probe_config;
    pc.seed = cfg.seed;
    rec.probe_a = linear_probe(model.encoder_a, Modality::a, splits, pc);
    rec.probe_v = linear_probe(model.encoder_v, Modality::v, splits, pc);
  }
  return {std::move(model), std::move(rec)};
}

inline TrainResult train(const Splits& splits, const TrainConfig& cfg) {
  cfg.validate();
  return train(splits, cfg, init_model(cfg, splits.train));
}

}  // namespace ogmge
