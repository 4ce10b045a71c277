#pragma once

// Two-encoder multimodal classifier: a rectifier MLP per modality feeding a
// linear head whose weight is split into one block per modality,
//   logits = W_a f_a + W_v f_v + b.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ogmge/numkit.hpp"

namespace ogmge {

enum class Modality { a, v };

/// Which modality a parameter tensor belongs to. The head bias has none.
enum class Owner { a, v, shared };

inline const char* to_string(Modality m) { return m == Modality::a ? "a" : "v"; }

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// Rectifier between layers, identity after the last one.
struct EncoderParams {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    require(!layers.empty(), "encoder: at least one layer");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(layers[l].bias.size() == layers[l].out_dim(), "encoder: bias length mismatch");
      if (l > 0) require(layers[l].in_dim() == layers[l - 1].out_dim(), "encoder: layer dims do not chain");
    }
  }

  static EncoderParams zeros(std::span<const std::size_t> dims) {
    require(dims.size() >= 2, "encoder: need input and output dims");
    EncoderParams e;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      e.layers.push_back({Matrix(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1], 0.0)});
    return e;
  }
};

enum class FusionMode { concatenation, summation };

inline const char* to_string(FusionMode m) {
  return m == FusionMode::concatenation ? "concatenation" : "summation";
}

struct FusionHead {
  FusionMode mode = FusionMode::concatenation;
  Matrix w_a;  // M x d_a
  Matrix w_v;  // M x d_v
  std::vector<double> bias;

  std::size_t num_classes() const { return bias.size(); }

  void validate() const {
    require(bias.size() >= 2, "head: at least two classes");
    require(w_a.rows() == bias.size() && w_v.rows() == bias.size(), "head: block rows must equal class count");
    if (mode == FusionMode::summation)
      require(w_a.cols() == w_v.cols(), "head: summation fusion needs equal feature dims");
  }
};

struct ModelParams {
  EncoderParams encoder_a;
  EncoderParams encoder_v;
  FusionHead head;

  const EncoderParams& encoder(Modality m) const { return m == Modality::a ? encoder_a : encoder_v; }

  void validate() const {
    encoder_a.validate();
    encoder_v.validate();
    head.validate();
    require(encoder_a.out_dim() == head.w_a.cols(), "model: encoder a output does not match head block");
    require(encoder_v.out_dim() == head.w_v.cols(), "model: encoder v output does not match head block");
  }

  /// Same architecture, every entry zero.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto t : z.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
    return z;
  }

  template <class V>
  struct TensorRef {
    std::string name;
    Owner owner;
    bool is_encoder;
    std::span<V> values;
  };

  /// Every parameter tensor in a fixed canonical order.
  std::vector<TensorRef<double>> tensors() { return collect<double>(*this); }
  std::vector<TensorRef<const double>> tensors() const { return collect<const double>(*this); }

  friend bool operator==(const ModelParams& x, const ModelParams& y) {
    auto tx = x.tensors();
    auto ty = y.tensors();
    if (tx.size() != ty.size()) return false;
    for (std::size_t i = 0; i < tx.size(); ++i)
      if (!std::equal(tx[i].values.begin(), tx[i].values.end(), ty[i].values.begin(), ty[i].values.end()))
        return false;
    return x.head.mode == y.head.mode;
  }

 private:
  template <class V, class Self>
  static std::vector<TensorRef<V>> collect(Self& self) {
    std::vector<TensorRef<V>> out;
    auto add_encoder = [&](auto& enc, Owner owner, const char* tag) {
      for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        const std::string base = std::string("encoder_") + tag + ".layer" + std::to_string(l);
        out.push_back({base + ".weight", owner, true, enc.layers[l].weight.values()});
        out.push_back({base + ".bias", owner, true, std::span<V>(enc.layers[l].bias)});
      }
    };
    add_encoder(self.encoder_a, Owner::a, "a");
    out.push_back({"head.w_a", Owner::a, false, self.head.w_a.values()});
    add_encoder(self.encoder_v, Owner::v, "v");
    out.push_back({"head.w_v", Owner::v, false, self.head.w_v.values()});
    out.push_back({"head.bias", Owner::shared, false, std::span<V>(self.head.bias)});
    return out;
  }
};

struct EncoderCache {
  std::vector<Matrix> inputs;          // input to each layer
  std::vector<Matrix> preactivations;  // pre-rectifier output of each layer
};

inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  Matrix z = gemm_nt(x, layer.weight);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias[j];
  }
  return z;
}

/// Rectifier MLP forward. The returned cache is what encoder_backward needs.
inline Matrix encoder_forward(const EncoderParams& enc, const Matrix& x, EncoderCache* cache = nullptr) {
  enc.validate();
  require(x.cols() == enc.in_dim(), "encoder_forward: input width does not match first layer");
  if (cache) {
    cache->inputs.clear();
    cache->preactivations.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    Matrix z = dense_forward(enc.layers[l], h);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->preactivations.push_back(z);
    }
    if (l + 1 < enc.layers.size())
      for (double& v : z.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
    h = std::move(z);
  }
  return h;
}

/// W_u f_u + b/2: the head's approximate prediction from one modality alone.
inline Matrix unimodal_logits(const FusionHead& head, const Matrix& f_u, Modality u) {
  const Matrix& w = u == Modality::a ? head.w_a : head.w_v;
  require(f_u.cols() == w.cols(), "unimodal_logits: feature dim does not match head block");
  require(w.rows() == head.bias.size(), "unimodal_logits: head block rows do not match bias");
  Matrix out = gemm_nt(f_u, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += 0.5 * head.bias[j];
  }
  return out;
}

/// W_a f_a + W_v f_v + b, evaluated as the sum of the two uni-modal logits so
/// that the decomposition holds bit for bit.
inline Matrix fuse_logits(const FusionHead& head, const Matrix& f_a, const Matrix& f_v) {
  head.validate();
  require(f_a.cols() == head.w_a.cols() && f_v.cols() == head.w_v.cols(), "fuse_logits: feature dims do not match head");
  require(f_a.rows() == f_v.rows(), "fuse_logits: batch sizes differ");
  Matrix out = unimodal_logits(head, f_a, Modality::a);
  const Matrix part_v = unimodal_logits(head, f_v, Modality::v);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += part_v.values()[i];
  return out;
}

inline void check_labels(std::span<const int> labels, std::size_t num_classes, std::size_t rows) {
  require(labels.size() == rows, "labels: count does not match batch");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < num_classes, "labels: class index out of range");
}

/// Mean cross-entropy over the batch.
inline double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.cols(), logits.rows());
  require(logits.rows() > 0, "cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    total += log_sum_exp(z) - z[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(logits.rows());
}

/// Per-sample d loss_i / d logits_i = softmax(logits_i) - onehot(y_i).
/// Not divided by the batch size.
inline Matrix loss_grad_logits(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.cols(), logits.rows());
  Matrix g = softmax_rows(logits);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, static_cast<std::size_t>(labels[i])) -= 1.0;
  return g;
}

struct ForwardPass {
  EncoderCache cache_a;
  EncoderCache cache_v;
  Matrix f_a;
  Matrix f_v;
  Matrix logits;
};

inline ForwardPass forward(const ModelParams& model, const Matrix& x_a, const Matrix& x_v) {
  ForwardPass fp;
  fp.f_a = encoder_forward(model.encoder_a, x_a, &fp.cache_a);
  fp.f_v = encoder_forward(model.encoder_v, x_v, &fp.cache_v);
  fp.logits = fuse_logits(model.head, fp.f_a, fp.f_v);
  return fp;
}

/// Batch-mean gradient for every tensor, plus optionally the per-sample
/// gradient stack (one Matrix per tensor in canonical order, one row per
/// sample).
struct GradientBundle {
  ModelParams mean;
  std::vector<Matrix> per_sample;
  std::size_t batch_size = 0;

  bool has_per_sample() const { return !per_sample.empty(); }
};

namespace detail {

struct LayerDeltas {
  std::vector<Matrix> deltas;  // d loss_i / d preactivation, per layer, unscaled
  Matrix input_grad;
};

inline LayerDeltas encoder_deltas(const EncoderParams& enc, const EncoderCache& cache, const Matrix& d_out) {
  require(cache.inputs.size() == enc.layers.size() && cache.preactivations.size() == enc.layers.size(),
          "backward: stale cache (layer count)");
  LayerDeltas out;
  out.deltas.resize(enc.layers.size());
  Matrix delta = d_out;
  for (std::size_t l = enc.layers.size(); l-- > 0;) {
    const auto& layer = enc.layers[l];
    require(cache.preactivations[l].rows() == delta.rows() && cache.preactivations[l].cols() == layer.out_dim() &&
                cache.inputs[l].cols() == layer.in_dim(),
            "backward: stale cache (shape)");
    if (l + 1 < enc.layers.size()) {
      auto z = cache.preactivations[l].values();
      auto d = delta.values();
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(z[i] > 0.0)) d[i] = 0.0;
    }
    Matrix upstream = gemm(delta, layer.weight);
    out.deltas[l] = std::move(delta);
    delta = std::move(upstream);
  }
  out.input_grad = std::move(delta);
  return out;
}

inline void mean_outer(const Matrix& delta, const Matrix& input, double inv_m, std::span<double> w_grad,
                       std::span<double> b_grad) {
  Matrix g = gemm_tn(delta, input);
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) w_grad[i] = gv[i] * inv_m;
  for (std::size_t j = 0; j < b_grad.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < delta.rows(); ++i) s += delta(i, j);
    b_grad[j] = s * inv_m;
  }
}

inline Matrix per_sample_outer(const Matrix& delta, const Matrix& input) {
  Matrix out(delta.rows(), delta.cols() * input.cols());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    auto o = out.row(i);
    auto d = delta.row(i);
    auto x = input.row(i);
    for (std::size_t r = 0; r < d.size(); ++r)
      for (std::size_t c = 0; c < x.size(); ++c) o[r * x.size() + c] = d[r] * x[c];
  }
  return out;
}

}  // namespace detail

/// Exact gradients of the batch-mean loss, given the per-sample loss gradient
/// at the logits (`d_logits`, one row per sample). Per-sample gradients reuse
/// the same per-layer deltas: sample i's weight gradient is the outer product
/// of its delta row and its cached input row.
inline GradientBundle backward(const ModelParams& model, const ForwardPass& fp, const Matrix& d_logits,
                               bool per_sample = false) {
  model.validate();
  const std::size_t m = d_logits.rows();
  require(m > 0, "backward: empty batch");
  require(d_logits.cols() == model.head.num_classes(), "backward: d_logits width does not match class count");
  require(fp.f_a.rows() == m && fp.f_v.rows() == m, "backward: stale cache (batch size)");
  require(fp.f_a.cols() == model.head.w_a.cols() && fp.f_v.cols() == model.head.w_v.cols(),
          "backward: stale cache (feature dims)");
  const double inv_m = 1.0 / static_cast<double>(m);

  GradientBundle out;
  out.batch_size = m;
  out.mean = model.zeros_like();
  auto& g = out.mean;

  Matrix gw_a = gemm_tn(d_logits, fp.f_a);
  Matrix gw_v = gemm_tn(d_logits, fp.f_v);
  for (std::size_t i = 0; i < gw_a.size(); ++i) g.head.w_a.values()[i] = gw_a.values()[i] * inv_m;
  for (std::size_t i = 0; i < gw_v.size(); ++i) g.head.w_v.values()[i] = gw_v.values()[i] * inv_m;
  for (std::size_t j = 0; j < d_logits.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += d_logits(i, j);
    g.head.bias[j] = s * inv_m;
  }

  const Matrix d_fa = gemm(d_logits, model.head.w_a);
  const Matrix d_fv = gemm(d_logits, model.head.w_v);
  const auto deltas_a = detail::encoder_deltas(model.encoder_a, fp.cache_a, d_fa);
  const auto deltas_v = detail::encoder_deltas(model.encoder_v, fp.cache_v, d_fv);

  auto fill_encoder = [&](const EncoderCache& cache, const detail::LayerDeltas& d, EncoderParams& eg) {
    for (std::size_t l = 0; l < eg.layers.size(); ++l)
      detail::mean_outer(d.deltas[l], cache.inputs[l], inv_m, eg.layers[l].weight.values(), eg.layers[l].bias);
  };
  fill_encoder(fp.cache_a, deltas_a, g.encoder_a);
  fill_encoder(fp.cache_v, deltas_v, g.encoder_v);

  if (per_sample) {
    // Canonical order: encoder_a layers, head.w_a, encoder_v layers, head.w_v, head.bias.
    auto push_encoder = [&](const EncoderCache& cache, const detail::LayerDeltas& d) {
      for (std::size_t l = 0; l < d.deltas.size(); ++l) {
        out.per_sample.push_back(detail::per_sample_outer(d.deltas[l], cache.inputs[l]));
        out.per_sample.push_back(d.deltas[l]);
      }
    };
    push_encoder(fp.cache_a, deltas_a);
    out.per_sample.push_back(detail::per_sample_outer(d_logits, fp.f_a));
    push_encoder(fp.cache_v, deltas_v);
    out.per_sample.push_back(detail::per_sample_outer(d_logits, fp.f_v));
    out.per_sample.push_back(d_logits);
  }
  return out;
}

/// He-normal encoder weights, Xavier-normal head blocks, zero biases. In
/// summation mode the two head blocks start out identical.
inline ModelParams init_model(std::span<const std::size_t> dims_a, std::span<const std::size_t> dims_v,
                              std::size_t num_classes, FusionMode mode, Rng& rng) {
  ModelParams p;
  p.encoder_a = EncoderParams::zeros(dims_a);
  p.encoder_v = EncoderParams::zeros(dims_v);
  auto he = [&](EncoderParams& enc) {
    for (auto& layer : enc.layers) {
      const double s = std::sqrt(2.0 / static_cast<double>(layer.in_dim()));
      for (double& w : layer.weight.values()) w = s * rng.normal();
    }
  };
  he(p.encoder_a);
  he(p.encoder_v);
  p.head.mode = mode;
  p.head.bias.assign(num_classes, 0.0);
  const std::size_t d_a = p.encoder_a.out_dim();
  const std::size_t d_v = p.encoder_v.out_dim();
  const double s = std::sqrt(2.0 / static_cast<double>(num_classes + d_a + d_v));
  p.head.w_a = Matrix(num_classes, d_a);
  for (double& w : p.head.w_a.values()) w = s * rng.normal();
  if (mode == FusionMode::summation) {
    p.head.w_v = p.head.w_a;
  } else {
    p.head.w_v = Matrix(num_classes, d_v);
    for (double& w : p.head.w_v.values()) w = s * rng.normal();
  }
  p.validate();
  return p;
}

}  // namespace ogmge
