#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "unitquant/model.hpp"
#include "unitquant/tensor.hpp"

namespace uq {

/// Symmetric signed code range for a bit-width: [-2^(b-1), 2^(b-1)-1].
struct CodeRange {
  int bits;
  long lo() const { return -(1L << (bits - 1)); }
  long hi() const { return (1L << (bits - 1)) - 1; }
};

/// Per-layer weight quantization state: bit-width plus one positive scale per
/// output channel; dequantized value = scale * code.
struct QuantParams {
  int bits = 0;
  std::vector<float> scales;

  long lo() const { return CodeRange{bits}.lo(); }
  long hi() const { return CodeRange{bits}.hi(); }
};

inline void check_bits(int bits) {
  if (bits < 2 || bits > 8)
    throw ParameterError("weight bit-width must be in [2,8], got " + std::to_string(bits));
}

/// Mean squared reconstruction error of one channel under scale `alpha`.
inline double channel_sq_error(const float* w, std::int64_t n, double alpha, long lo, long hi) {
  double err = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double code = std::round(static_cast<double>(w[i]) / alpha);
    code = std::min(std::max(code, static_cast<double>(lo)), static_cast<double>(hi));
    const double r = static_cast<double>(w[i]) - alpha * code;
    err += r * r;
  }
  return err;
}

/// MSE-minimizing clip-fraction search: alpha = c * max|w| / (2^(b-1)-1) over
/// c in {0.01,...,1.00}, ties toward larger alpha. All-zero channels get
/// alpha = 1.
inline QuantParams weight_scale_search(const TensorF& weight, int bits, int grid_points = 100) {
  check_bits(bits);
  const std::int64_t oc = weight.dim(0);
  const std::int64_t per_ch = weight.numel() / oc;
  const CodeRange range{bits};
  QuantParams params;
  params.bits = bits;
  params.scales.resize(static_cast<std::size_t>(oc));
  for (std::int64_t o = 0; o < oc; ++o) {
    const float* w = weight.data.data() + o * per_ch;
    double amax = 0;
    for (std::int64_t i = 0; i < per_ch; ++i) amax = std::max(amax, std::abs(double(w[i])));
    if (amax == 0) {
      params.scales[static_cast<std::size_t>(o)] = 1.0f;
      continue;
    }
    double best_alpha = 0, best_err = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= grid_points; ++k) {
      const double c = static_cast<double>(k) / grid_points;
      const double alpha = c * amax / static_cast<double>(range.hi());
      const double err = channel_sq_error(w, per_ch, alpha, range.lo(), range.hi());
      if (err <= best_err) {  // <=: ties resolve toward the larger alpha
        best_err = err;
        best_alpha = alpha;
      }
    }
    params.scales[static_cast<std::size_t>(o)] = static_cast<float>(best_alpha);
  }
  return params;
}

/// Round-to-nearest onto the channel grid; codes clamp into the signed range.
inline std::vector<std::int8_t> quantize_rtn(const TensorF& weight, const QuantParams& params) {
  const std::int64_t oc = weight.dim(0);
  const std::int64_t per_ch = weight.numel() / oc;
  std::vector<std::int8_t> codes(static_cast<std::size_t>(weight.numel()));
  for (std::int64_t o = 0; o < oc; ++o) {
    const float alpha = params.scales[static_cast<std::size_t>(o)];
    for (std::int64_t i = 0; i < per_ch; ++i) {
      long code = std::lround(static_cast<double>(weight.data[o * per_ch + i]) / alpha);
      code = std::min(std::max(code, params.lo()), params.hi());
      codes[static_cast<std::size_t>(o * per_ch + i)] = static_cast<std::int8_t>(code);
    }
  }
  return codes;
}

/// scale * code, elementwise; the single definition shared by quantization,
/// commit and deserialization so results stay bit-identical.
inline TensorF dequantize(const std::vector<std::int8_t>& codes, const QuantParams& params,
                          const std::vector<std::int64_t>& shape) {
  TensorF out(shape);
  const std::int64_t oc = shape[0];
  const std::int64_t per_ch = out.numel() / oc;
  for (std::int64_t o = 0; o < oc; ++o) {
    const float alpha = params.scales[static_cast<std::size_t>(o)];
    for (std::int64_t i = 0; i < per_ch; ++i)
      out.data[static_cast<std::size_t>(o * per_ch + i)] =
          alpha * static_cast<float>(codes[static_cast<std::size_t>(o * per_ch + i)]);
  }
  return out;
}

/// Per-element search triples: one grid step down, stay, one step up, each
/// clamped into the code range (clamp duplicates retained so m = 3 always).
template <Scalar S>
struct CandidateSet {
  int bits = 0;
  std::vector<std::array<std::int8_t, 3>> codes;
  std::vector<std::array<S, 3>> values;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

template <Scalar S = float>
CandidateSet<S> build_candidates(const std::vector<std::int8_t>& codes, const QuantParams& params,
                                 const std::vector<std::int64_t>& shape) {
  CandidateSet<S> set;
  set.bits = params.bits;
  const std::int64_t n = numel_of(shape);
  const std::int64_t oc = shape[0];
  const std::int64_t per_ch = n / oc;
  set.codes.resize(static_cast<std::size_t>(n));
  set.values.resize(static_cast<std::size_t>(n));
  const long lo = params.lo(), hi = params.hi();
  for (std::int64_t e = 0; e < n; ++e) {
    const long c = codes[static_cast<std::size_t>(e)];
    const S alpha = static_cast<S>(params.scales[static_cast<std::size_t>(e / per_ch)]);
    for (int j = 0; j < 3; ++j) {
      const long cj = std::min(std::max(c + j - 1, lo), hi);
      set.codes[static_cast<std::size_t>(e)][static_cast<std::size_t>(j)] =
          static_cast<std::int8_t>(cj);
      set.values[static_cast<std::size_t>(e)][static_cast<std::size_t>(j)] =
          alpha * static_cast<S>(cj);
    }
  }
  return set;
}

/// Quantize every conv/linear layer in place with RTN. The first and last
/// quantizable layers stay at 8 bits; the rest use `bits_w`.
template <Scalar S>
void quantize_graph_rtn(ModelGraph<S>& g, int bits_w)
  requires std::same_as<S, float>
{
  check_bits(bits_w);
  const std::vector<int> q = g.quantizable_indices();
  for (std::size_t i = 0; i < q.size(); ++i) {
    LayerSpec<float>& l = g.layers[static_cast<std::size_t>(q[i])];
    const int bits = (i == 0 || i + 1 == q.size()) ? 8 : bits_w;
    const QuantParams params = weight_scale_search(l.weight, bits);
    l.qbits = bits;
    l.qcodes = quantize_rtn(l.weight, params);
    l.qscales = TensorF({static_cast<std::int64_t>(params.scales.size())}, params.scales);
    l.weight = dequantize(l.qcodes, params, l.weight.shape);
  }
}

inline QuantParams layer_quant_params(const LayerSpec<float>& l) {
  QuantParams p;
  p.bits = l.qbits;
  p.scales = l.qscales.data;
  return p;
}

/// Insert per-tensor activation quantizers: one at the network input and one
/// after every relu. Scales start at 0, meaning "not yet calibrated".
template <Scalar S>
ModelGraph<S> insert_act_quant(const ModelGraph<S>& g, int bits_a) {
  ModelGraph<S> out;
  out.input_shape = g.input_shape;
  out.class_count = g.class_count;
  out.layers.push_back(LayerSpec<S>::act_quant(bits_a));
  for (const auto& l : g.layers) {
    out.layers.push_back(l);
    if (l.kind == LayerKind::relu) out.layers.push_back(LayerSpec<S>::act_quant(bits_a));
  }
  return out;
}

}  // namespace uq
