#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "unitquant/graph.hpp"
#include "unitquant/quant.hpp"

namespace uq {

// ---------------------------------------------------------------------------
// relaxed candidate distributions
// ---------------------------------------------------------------------------

/// Temperature softmax P_i = exp(a_i/t) / sum_j exp(a_j/t), max-subtracted.
template <Scalar S>
VecX<S> softmax_temp(const VecX<S>& a, S t) {
  if (!(t > S(0))) throw ParameterError("softmax_temp: temperature must be positive");
  VecX<S> p = ((a.array() - a.maxCoeff()) / t).exp();
  return p / p.sum();
}

template <Scalar S>
std::array<S, 3> softmax3(const std::array<S, 3>& a, S t) {
  const S m = std::max(a[0], std::max(a[1], a[2]));
  std::array<S, 3> p{std::exp((a[0] - m) / t), std::exp((a[1] - m) / t),
                     std::exp((a[2] - m) / t)};
  const S z = p[0] + p[1] + p[2];
  p[0] /= z;
  p[1] /= z;
  p[2] /= z;
  return p;
}

/// Expectation over the candidate values under P.
template <Scalar S>
S expected_weight(const VecX<S>& values, const VecX<S>& probs) {
  if (values.size() != probs.size())
    throw DimensionError("expected_weight: value/probability length mismatch");
  return values.dot(probs);
}

template <Scalar S>
S expected3(const std::array<S, 3>& v, const std::array<S, 3>& p) {
  return v[0] * p[0] + v[1] * p[1] + v[2] * p[2];
}

/// Exponential temperature decay from t_start at step 0 to t_end at the last
/// step. A single-step schedule stays at t_start.
inline double anneal(int step, int steps, double t_start, double t_end) {
  if (steps <= 1) return t_start;
  const double frac = static_cast<double>(step) / static_cast<double>(steps - 1);
  return t_start * std::pow(t_end / t_start, frac);
}

// ---------------------------------------------------------------------------
// unit machinery
// ---------------------------------------------------------------------------

struct CalibConfig {
  int bits_w = 3;
  int bits_a = 32;
  int unit_size = 3;
  int steps = 2000;
  float lr_logits = 1e-2f;
  float lr_scale = 1e-3f;
  int pact_steps = 500;
  float t_start = 1.0f;
  float t_end = 0.01f;
  float logit_init_bias = 0.5f;
  int shard_size = 32;
  int calib_size = 1024;
  std::uint64_t seed = 0;
  bool propagate_quantized = true;  // unit inputs from the quantized prefix
  bool labels_from_model = false;   // Fisher labels from argmax predictions
  int chunk = 256;                  // batching for cache building

  void validate() const {
    if (steps < 0) throw ParameterError("calib: steps must be >= 0");
    if (unit_size < 1) throw ParameterError("calib: unit size must be >= 1");
    if (!(t_start >= t_end && t_end > 0))
      throw ParameterError("calib: need t_start >= t_end > 0");
    if (shard_size < 1) throw ParameterError("calib: shard size must be >= 1");
    if (calib_size < 1) throw ParameterError("calib: calibration size must be >= 1");
  }
};

/// Materialized copy of one unit's layer span; local layer i is graph layer
/// span_begin + i.
template <Scalar S>
struct UnitSlice {
  ModelGraph<S> net;
  std::vector<int> q_local;
  int span_begin = 0;

  template <Scalar T>
  UnitSlice<T> cast() const {
    return UnitSlice<T>{net.template cast<T>(), q_local, span_begin};
  }
};

template <Scalar S>
UnitSlice<S> make_unit_slice(const ModelGraph<S>& g, const Unit& unit) {
  UnitSlice<S> s;
  s.span_begin = unit.span_begin;
  s.net.input_shape = g.input_shape;
  s.net.class_count = g.class_count;
  for (int li = unit.span_begin; li <= unit.tap; ++li)
    s.net.layers.push_back(g.layers[static_cast<std::size_t>(li)]);
  for (int qi : unit.q_layers) s.q_local.push_back(qi - unit.span_begin);
  return s;
}

/// Per-sample caches for one unit's objective: inputs at the span start,
/// float-reference pre-activations at the tap, and squared tap gradients.
template <Scalar S>
struct UnitContext {
  Tensor<S> inputs;
  Tensor<S> targets;
  Tensor<S> fisher;

  std::int64_t size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }

  template <Scalar T>
  UnitContext<T> cast() const {
    return UnitContext<T>{inputs.template cast<T>(), targets.template cast<T>(),
                          fisher.template cast<T>()};
  }
};

template <Scalar S>
Tensor<S> gather_rows(const Tensor<S>& t, std::span<const std::int64_t> idx) {
  std::vector<std::int64_t> shape = t.shape;
  shape[0] = static_cast<std::int64_t>(idx.size());
  Tensor<S> out(shape);
  const std::int64_t row = t.numel() / t.dim(0);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data.data() + idx[i] * row, row, out.data.data() + static_cast<std::int64_t>(i) * row);
  return out;
}

/// Round-robin shard of the calibration cache for one SGD step.
inline std::vector<std::int64_t> shard_indices(int step, int shard_size, std::int64_t n) {
  const std::int64_t count = std::min<std::int64_t>(shard_size, n);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  const std::int64_t start = (static_cast<std::int64_t>(step) * count) % n;
  for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = (start + i) % n;
  return idx;
}

/// Fisher-weighted reconstruction error of the unit's tap over a sample
/// shard: mean_s sum_j fisher[s,j] * (zhat[s,j] - z[s,j])^2. When `grads` is
/// given, also backpropagates it through the slice.
template <Scalar S>
double unit_objective(const UnitSlice<S>& slice, const UnitContext<S>& ctx,
                      std::span<const std::int64_t> idx, Grads<S>* grads = nullptr) {
  if (idx.empty()) throw DataError("unit_objective: empty sample shard");
  const Tensor<S> in = gather_rows(ctx.inputs, idx);
  const Tensor<S> z = gather_rows(ctx.targets, idx);
  const Tensor<S> f = gather_rows(ctx.fisher, idx);
  Trace<S> trace;
  const Tensor<S> zhat = forward(slice.net, in, &trace);
  if (zhat.shape != z.shape)
    throw DimensionError("unit_objective: tap shape " + shape_str(zhat.shape) +
                         " vs target shape " + shape_str(z.shape));
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  double obj = 0;
  for (std::size_t i = 0; i < zhat.data.size(); ++i) {
    const double r = static_cast<double>(zhat.data[i]) - static_cast<double>(z.data[i]);
    obj += static_cast<double>(f.data[i]) * r * r;
  }
  obj *= inv_n;
  if (grads) {
    Tensor<S> d(zhat.shape);
    for (std::size_t i = 0; i < zhat.data.size(); ++i)
      d.data[i] = static_cast<S>(2.0 * inv_n * static_cast<double>(f.data[i]) *
                                 (static_cast<double>(zhat.data[i]) - static_cast<double>(z.data[i])));
    *grads = backward_range(slice.net, trace, d, false);
  }
  return obj;
}

/// Candidate values and logits for every weight element of a unit, one entry
/// per quantizable layer.
template <Scalar S>
struct UnitDistributions {
  std::vector<CandidateSet<S>> candidates;
  std::vector<std::vector<std::array<S, 3>>> logits;

  template <Scalar T>
  UnitDistributions<T> cast() const {
    UnitDistributions<T> o;
    for (const auto& c : candidates) {
      CandidateSet<T> ct;
      ct.bits = c.bits;
      ct.codes = c.codes;
      ct.values.resize(c.values.size());
      for (std::size_t i = 0; i < c.values.size(); ++i)
        for (int j = 0; j < 3; ++j)
          ct.values[i][static_cast<std::size_t>(j)] =
              static_cast<T>(c.values[i][static_cast<std::size_t>(j)]);
      o.candidates.push_back(std::move(ct));
    }
    o.logits.resize(logits.size());
    for (std::size_t l = 0; l < logits.size(); ++l) {
      o.logits[l].resize(logits[l].size());
      for (std::size_t e = 0; e < logits[l].size(); ++e)
        for (int j = 0; j < 3; ++j)
          o.logits[l][e][static_cast<std::size_t>(j)] =
              static_cast<T>(logits[l][e][static_cast<std::size_t>(j)]);
    }
    return o;
  }
};

/// Logits start biased toward the middle (round-to-nearest) candidate.
template <Scalar S>
void init_logits(UnitDistributions<S>& dist, S middle_bias) {
  dist.logits.clear();
  for (const auto& c : dist.candidates)
    dist.logits.push_back(
        std::vector<std::array<S, 3>>(c.values.size(), {S(0), middle_bias, S(0)}));
}

/// Write the per-element expectation sum_i V_i P_i into the slice weights.
template <Scalar S>
void set_expected_weights(UnitSlice<S>& slice, const UnitDistributions<S>& dist, S t) {
  for (std::size_t l = 0; l < dist.candidates.size(); ++l) {
    Tensor<S>& w = slice.net.layers[static_cast<std::size_t>(slice.q_local[l])].weight;
    const auto& values = dist.candidates[l].values;
    const auto& logits = dist.logits[l];
    for (std::size_t e = 0; e < values.size(); ++e)
      w.data[e] = expected3(values[e], softmax3(logits[e], t));
  }
}

/// Chain rule from expected-weight gradients to logit gradients:
/// dL/da_i = dL/dw_e * P_i * (V_i - w_e) / t.
template <Scalar S>
void logit_grads(const UnitDistributions<S>& dist, S t, const UnitSlice<S>& slice,
                 const Grads<S>& grads, std::vector<std::vector<std::array<S, 3>>>& da) {
  da.resize(dist.candidates.size());
  for (std::size_t l = 0; l < dist.candidates.size(); ++l) {
    const auto& values = dist.candidates[l].values;
    const auto& logits = dist.logits[l];
    const Tensor<S>& dw = grads.layers[static_cast<std::size_t>(slice.q_local[l])].weight;
    da[l].assign(values.size(), {S(0), S(0), S(0)});
    for (std::size_t e = 0; e < values.size(); ++e) {
      const std::array<S, 3> p = softmax3(logits[e], t);
      const S we = expected3(values[e], p);
      const S g = dw.data[e] / t;
      for (int j = 0; j < 3; ++j)
        da[l][e][static_cast<std::size_t>(j)] =
            g * p[static_cast<std::size_t>(j)] * (values[e][static_cast<std::size_t>(j)] - we);
    }
  }
}

/// Objective as a function of the logits (expected weights materialized
/// first); optionally returns dL/da.
template <Scalar S>
double objective_with_logits(UnitSlice<S>& slice, const UnitDistributions<S>& dist, S t,
                             const UnitContext<S>& ctx, std::span<const std::int64_t> idx,
                             std::vector<std::vector<std::array<S, 3>>>* da = nullptr) {
  set_expected_weights(slice, dist, t);
  if (!da) return unit_objective(slice, ctx, idx);
  Grads<S> grads;
  const double obj = unit_objective(slice, ctx, idx, &grads);
  logit_grads(dist, t, slice, grads, *da);
  return obj;
}

/// argmax_i P_i per element; exact ties resolve to the middle (RTN)
/// candidate, then to the lower index.
template <Scalar S>
std::vector<std::vector<int>> argmax_selection(const UnitDistributions<S>& dist) {
  std::vector<std::vector<int>> sel(dist.logits.size());
  for (std::size_t l = 0; l < dist.logits.size(); ++l) {
    sel[l].resize(dist.logits[l].size());
    for (std::size_t e = 0; e < dist.logits[l].size(); ++e) {
      const auto& a = dist.logits[l][e];
      const S m = std::max(a[0], std::max(a[1], a[2]));
      sel[l][e] = a[1] == m ? 1 : (a[0] == m ? 0 : 2);
    }
  }
  return sel;
}

/// Write one candidate value per element into the slice weights.
template <Scalar S>
void apply_selection(UnitSlice<S>& slice, const UnitDistributions<S>& dist,
                     const std::vector<std::vector<int>>& sel) {
  for (std::size_t l = 0; l < dist.candidates.size(); ++l) {
    Tensor<S>& w = slice.net.layers[static_cast<std::size_t>(slice.q_local[l])].weight;
    const auto& values = dist.candidates[l].values;
    for (std::size_t e = 0; e < values.size(); ++e)
      w.data[e] = values[e][static_cast<std::size_t>(sel[l][e])];
  }
}

template <Scalar S>
double objective_at_selection(UnitSlice<S>& slice, const UnitDistributions<S>& dist,
                              const std::vector<std::vector<int>>& sel, const UnitContext<S>& ctx,
                              std::span<const std::int64_t> idx) {
  apply_selection(slice, dist, sel);
  return unit_objective(slice, ctx, idx);
}

inline std::vector<std::int64_t> all_indices(std::int64_t n) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

struct OptimizeResult {
  std::vector<std::vector<int>> selection;
  double final_temperature = 0;
  double min_max_prob = 1.0;  // smallest per-element max probability at the end
};

/// Annealed relaxation: SGD on the logits of every weight element while the
/// temperature decays, then a hard argmax commit.
///
/// Step sizing: updates use the tempered gradient t * dL/da (the gradient in
/// a/t coordinates), normalized by its RMS on the first step and clipped per
/// element. The raw gradient grows as 1/t toward the end of the schedule,
/// which would turn shard noise into random logit kicks for the many
/// elements the Fisher-weighted objective leaves unconstrained; tempering
/// freezes committed elements and keeps that noise below the round-to-nearest
/// initialization bias, while `lr_logits` stays a scale-free per-step RMS
/// movement.
template <Scalar S>
OptimizeResult optimize_unit(UnitSlice<S>& slice, UnitDistributions<S>& dist,
                             const UnitContext<S>& ctx, const CalibConfig& cfg,
                             int unit_index = -1) {
  std::vector<std::vector<std::array<S, 3>>> da;
  double lr = 0;
  double clip = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    const S t = static_cast<S>(anneal(step, cfg.steps, cfg.t_start, cfg.t_end));
    const std::vector<std::int64_t> idx = shard_indices(step, cfg.shard_size, ctx.size());
    const double obj = objective_with_logits(slice, dist, t, ctx, idx, &da);
    if (!std::isfinite(obj))
      throw Error("optimize_unit: non-finite objective in unit " + std::to_string(unit_index) +
                  " at step " + std::to_string(step));
    if (step == 0) {
      double sq = 0;
      std::int64_t count = 0;
      for (const auto& layer : da)
        for (const auto& g : layer)
          for (int j = 0; j < 3; ++j) {
            const double u = static_cast<double>(t) * g[static_cast<std::size_t>(j)];
            sq += u * u;
            ++count;
          }
      const double rms = count > 0 ? std::sqrt(sq / static_cast<double>(count)) : 0.0;
      lr = rms > 0 ? static_cast<double>(cfg.lr_logits) / rms : 0.0;
      clip = 5.0 * rms;
    }
    for (std::size_t l = 0; l < dist.logits.size(); ++l) {
      auto& a = dist.logits[l];
      const auto& g = da[l];
      for (std::size_t e = 0; e < a.size(); ++e)
        for (int j = 0; j < 3; ++j) {
          double u = static_cast<double>(t) * g[e][static_cast<std::size_t>(j)];
          u = std::min(std::max(u, -clip), clip);
          a[e][static_cast<std::size_t>(j)] -= static_cast<S>(lr * u);
        }
    }
  }
  OptimizeResult res;
  res.final_temperature = cfg.steps > 1 ? cfg.t_end : cfg.t_start;
  res.selection = argmax_selection(dist);
  for (std::size_t l = 0; l < dist.logits.size(); ++l)
    for (std::size_t e = 0; e < dist.logits[l].size(); ++e) {
      const auto p = softmax3(dist.logits[l][e], static_cast<S>(res.final_temperature));
      res.min_max_prob =
          std::min(res.min_max_prob,
                   static_cast<double>(std::max(p[0], std::max(p[1], p[2]))));
    }
  return res;
}

// ---------------------------------------------------------------------------
// calibration drivers (definitions in calib.cpp)
// ---------------------------------------------------------------------------

struct UnitReport {
  int index = 0;
  std::vector<int> layers;  // graph indices of the unit's quantizable layers
  double obj_before = 0;
  double obj_after = 0;
  int steps = 0;
  double final_temperature = 0;
  double min_max_prob = 1.0;
  double seconds = 0;
};

struct CalibReport {
  std::vector<UnitReport> units;
  std::string input_propagation;     // "quantized" | "float"
  std::string fisher_label_source;   // "dataset" | "model_argmax"
  bool act_quant = false;
  double seconds = 0;
};

struct CalibData {
  TensorF inputs;
  std::vector<int> labels;
};

/// Forward `inputs` through layers [0, end) of g in chunks; returns stacked
/// outputs.
TensorF forward_dataset(const ModelGraphF& g, const TensorF& inputs, int end, int chunk);

/// Float-reference targets and Fisher weights at a tap layer: per sample,
/// z = pre-activation and fisher = (dL/dz)^2 for the per-sample loss.
struct TapReference {
  TensorF targets;
  TensorF fisher;
};
TapReference compute_tap_reference(const ModelGraphF& ref, const CalibData& data, int tap,
                                   bool labels_from_model, int chunk);

TensorF fisher_weights(const ModelGraphF& ref, const CalibData& data, int tap,
                       bool labels_from_model, int chunk = 256);

/// Initialize every uncalibrated activation-quantizer scale in layers
/// [0, upto) at the 99.9th percentile of the absolute activations it sees.
void ensure_act_scales(ModelGraphF& g, const TensorF& calib_inputs, int upto, int chunk = 256);

/// PACT: SGD on the span's activation-quantizer scales against the unit
/// objective; scales stay >= 1e-6. Returns the number of scales touched.
int pact_learn_scales(ModelGraphF& g, const Unit& unit, const UnitContext<float>& ctx,
                      const CalibConfig& cfg);

struct CalibOutcome {
  ModelGraphF graph;
  CalibReport report;
};

/// The unit-wise calibration pipeline: RTN initialization, then for each
/// overlapped unit in order, rebuild candidates around the current codes,
/// cache contexts, anneal-optimize, commit, and learn activation scales.
CalibOutcome calibrate_unitwise(const ModelGraphF& folded, const CalibData& data,
                                const CalibConfig& cfg);

/// Same machinery with unit size 1.
CalibOutcome calibrate_layerwise(const ModelGraphF& folded, const CalibData& data,
                                 const CalibConfig& cfg);

/// RTN-only quantization (activation scales still calibrated when enabled).
CalibOutcome calibrate_rtn(const ModelGraphF& folded, const CalibData& data,
                           const CalibConfig& cfg);

}  // namespace uq
