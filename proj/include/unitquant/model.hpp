#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unitquant/tensor.hpp"

namespace uq {

enum class LayerKind { conv, linear, batchnorm, relu, maxpool, avgpool, flatten, actquant };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::linear: return "linear";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::actquant: return "actquant";
  }
  return "?";
}

/// One layer of a sequential network. Only the fields for its kind are
/// meaningful. Quantized conv/linear layers keep their integer codes and
/// per-channel scales next to the dequantized weight.
template <Scalar S>
struct LayerSpec {
  LayerKind kind = LayerKind::relu;

  Tensor<S> weight;  // conv: OIKK, linear: MxD
  Tensor<S> bias;
  int stride = 1;
  int pad = 0;
  int kernel = 0;  // pooling window; conv kernel is weight.dim(2)

  Tensor<S> gamma, beta, running_mean, running_var;
  double eps = 1e-5;

  int act_bits = 0;  // actquant
  S act_scale = S(0);

  int qbits = 0;  // 0 = unquantized weights
  std::vector<std::int8_t> qcodes;
  Tensor<S> qscales;  // one per output channel

  bool quantizable() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
  bool parametric() const { return quantizable(); }

  static LayerSpec conv2d(Tensor<S> w, Tensor<S> b, int stride_, int pad_) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.weight = std::move(w);
    l.bias = std::move(b);
    l.stride = stride_;
    l.pad = pad_;
    l.kernel = static_cast<int>(l.weight.dim(2));
    return l;
  }
  static LayerSpec dense(Tensor<S> w, Tensor<S> b) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.weight = std::move(w);
    l.bias = std::move(b);
    return l;
  }
  static LayerSpec batchnorm2d(Tensor<S> g, Tensor<S> b, Tensor<S> mean, Tensor<S> var,
                               double eps_) {
    LayerSpec l;
    l.kind = LayerKind::batchnorm;
    l.gamma = std::move(g);
    l.beta = std::move(b);
    l.running_mean = std::move(mean);
    l.running_var = std::move(var);
    l.eps = eps_;
    return l;
  }
  static LayerSpec activation() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
  }
  static LayerSpec pool(LayerKind k, int kernel_, int stride_) {
    LayerSpec l;
    l.kind = k;
    l.kernel = kernel_;
    l.stride = stride_;
    return l;
  }
  static LayerSpec reshape() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
  }
  static LayerSpec act_quant(int bits) {
    LayerSpec l;
    l.kind = LayerKind::actquant;
    l.act_bits = bits;
    return l;
  }

  template <Scalar T>
  LayerSpec<T> cast() const {
    LayerSpec<T> o;
    o.kind = kind;
    o.weight = weight.template cast<T>();
    o.bias = bias.template cast<T>();
    o.stride = stride;
    o.pad = pad;
    o.kernel = kernel;
    o.gamma = gamma.template cast<T>();
    o.beta = beta.template cast<T>();
    o.running_mean = running_mean.template cast<T>();
    o.running_var = running_var.template cast<T>();
    o.eps = eps;
    o.act_bits = act_bits;
    o.act_scale = static_cast<T>(act_scale);
    o.qbits = qbits;
    o.qcodes = qcodes;
    o.qscales = qscales.template cast<T>();
    return o;
  }
};

/// Ordered single-chain network plus its input/output contract.
template <Scalar S>
struct ModelGraph {
  std::vector<LayerSpec<S>> layers;
  std::vector<std::int64_t> input_shape;  // C,H,W
  int class_count = 0;

  template <Scalar T>
  ModelGraph<T> cast() const {
    ModelGraph<T> o;
    o.input_shape = input_shape;
    o.class_count = class_count;
    o.layers.reserve(layers.size());
    for (const auto& l : layers) o.layers.push_back(l.template cast<T>());
    return o;
  }

  std::vector<int> quantizable_indices() const {
    std::vector<int> q;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i)
      if (layers[static_cast<std::size_t>(i)].quantizable()) q.push_back(i);
    return q;
  }
};

using ModelGraphF = ModelGraph<float>;
using ModelGraphD = ModelGraph<double>;

/// A span of adjacent quantizable layers optimized jointly. `span_begin` is
/// the first graph layer executed from the cached unit input; the output tap
/// is the pre-activation of layer `tap` (the last quantizable layer).
struct Unit {
  int index = 0;
  int span_begin = 0;
  int tap = 0;
  std::vector<int> layers;    // graph indices span_begin..tap inclusive
  std::vector<int> q_layers;  // graph indices of the unit's quantizable layers
};

/// Absorb each batchnorm into the conv/linear layer immediately before it.
/// W' = W * g/sqrt(var+eps) per output channel, b' = (b-mean)*g/sqrt(var+eps) + beta.
template <Scalar S>
ModelGraph<S> fold_batchnorm(const ModelGraph<S>& g) {
  ModelGraph<S> out;
  out.input_shape = g.input_shape;
  out.class_count = g.class_count;
  for (const auto& layer : g.layers) {
    if (layer.kind != LayerKind::batchnorm) {
      out.layers.push_back(layer);
      continue;
    }
    if (out.layers.empty() || !out.layers.back().parametric())
      throw StructureError("fold_batchnorm: batchnorm has no preceding conv/linear layer");
    LayerSpec<S>& prev = out.layers.back();
    const std::int64_t oc = prev.weight.dim(0);
    if (layer.gamma.numel() != oc)
      throw DimensionError("fold_batchnorm: batchnorm channels " +
                           std::to_string(layer.gamma.numel()) + " vs layer outputs " +
                           std::to_string(oc));
    const std::int64_t per_ch = prev.weight.numel() / oc;
    for (std::int64_t o = 0; o < oc; ++o) {
      const double s = static_cast<double>(layer.gamma.data[o]) /
                       std::sqrt(static_cast<double>(layer.running_var.data[o]) + layer.eps);
      S* w = prev.weight.data.data() + o * per_ch;
      for (std::int64_t i = 0; i < per_ch; ++i) w[i] = static_cast<S>(w[i] * s);
      prev.bias.data[o] = static_cast<S>(
          (static_cast<double>(prev.bias.data[o]) - layer.running_mean.data[o]) * s +
          layer.beta.data[o]);
    }
  }
  return out;
}

/// Overlapped units of `u` adjacent quantizable layers. With L quantizable
/// layers and L >= u this yields L-u+1 units; fewer layers collapse to a
/// single unit holding everything.
template <Scalar S>
std::vector<Unit> partition_units(const ModelGraph<S>& g, int u) {
  if (u < 1) throw ParameterError("partition_units: unit size must be >= 1");
  const std::vector<int> q = g.quantizable_indices();
  const int L = static_cast<int>(q.size());
  std::vector<Unit> units;
  if (L == 0) return units;
  const int count = L >= u ? L - u + 1 : 1;
  const int width = std::min(u, L);
  for (int i = 0; i < count; ++i) {
    Unit unit;
    unit.index = i;
    unit.q_layers.assign(q.begin() + i, q.begin() + i + width);
    unit.span_begin = i == 0 ? 0 : unit.q_layers.front();
    unit.tap = unit.q_layers.back();
    for (int li = unit.span_begin; li <= unit.tap; ++li) unit.layers.push_back(li);
    units.push_back(std::move(unit));
  }
  return units;
}

}  // namespace uq
