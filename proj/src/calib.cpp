#include "unitquant/calib.hpp"

#include <algorithm>
#include <chrono>

namespace uq {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Graph-layer index -> index in the reference graph (actquant layers have
// no counterpart and map to -1).
std::vector<int> reference_index_map(const ModelGraphF& g) {
  std::vector<int> map(g.layers.size(), -1);
  int ref = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    if (g.layers[i].kind != LayerKind::actquant) map[i] = ref++;
  return map;
}

std::vector<std::vector<int>> middle_selection(const UnitDistributions<float>& dist) {
  std::vector<std::vector<int>> sel(dist.candidates.size());
  for (std::size_t l = 0; l < dist.candidates.size(); ++l)
    sel[l].assign(dist.candidates[l].values.size(), 1);
  return sel;
}

void commit_selection(ModelGraphF& g, const Unit& unit, const UnitDistributions<float>& dist,
                      const std::vector<std::vector<int>>& sel) {
  for (std::size_t l = 0; l < unit.q_layers.size(); ++l) {
    LayerSpec<float>& layer = g.layers[static_cast<std::size_t>(unit.q_layers[l])];
    const auto& codes = dist.candidates[l].codes;
    for (std::size_t e = 0; e < codes.size(); ++e)
      layer.qcodes[e] = codes[e][static_cast<std::size_t>(sel[l][e])];
    layer.weight = dequantize(layer.qcodes, layer_quant_params(layer), layer.weight.shape);
  }
}

CalibOutcome run_calibration(const ModelGraphF& folded, const CalibData& data,
                             const CalibConfig& cfg, int unit_size) {
  cfg.validate();
  if (data.inputs.shape.empty() || data.inputs.dim(0) < 1)
    throw DataError("calibrate: calibration set is empty");
  const auto t_total = std::chrono::steady_clock::now();

  const ModelGraphF& ref = folded;
  ModelGraphF q = cfg.bits_a < 32 ? insert_act_quant(folded, cfg.bits_a) : folded;
  const std::vector<int> ref_map = reference_index_map(q);
  quantize_graph_rtn(q, cfg.bits_w);

  CalibReport report;
  report.input_propagation = cfg.propagate_quantized ? "quantized" : "float";
  report.fisher_label_source = cfg.labels_from_model ? "model_argmax" : "dataset";
  report.act_quant = cfg.bits_a < 32;

  for (const Unit& unit : partition_units(q, unit_size)) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.bits_a < 32) ensure_act_scales(q, data.inputs, unit.tap, cfg.chunk);

    UnitContext<float> ctx;
    if (cfg.propagate_quantized) {
      ctx.inputs = forward_dataset(q, data.inputs, unit.span_begin, cfg.chunk);
    } else {
      const int ref_end = unit.span_begin == 0 ? 0 : ref_map[static_cast<std::size_t>(unit.span_begin)];
      ctx.inputs = forward_dataset(ref, data.inputs, ref_end, cfg.chunk);
    }
    const TapReference tap = compute_tap_reference(
        ref, data, ref_map[static_cast<std::size_t>(unit.tap)], cfg.labels_from_model, cfg.chunk);
    ctx.targets = tap.targets;
    ctx.fisher = tap.fisher;

    UnitSlice<float> slice = make_unit_slice(q, unit);
    UnitDistributions<float> dist;
    for (int qi : unit.q_layers) {
      const LayerSpec<float>& layer = q.layers[static_cast<std::size_t>(qi)];
      dist.candidates.push_back(
          build_candidates<float>(layer.qcodes, layer_quant_params(layer), layer.weight.shape));
    }
    init_logits(dist, cfg.logit_init_bias);

    const std::vector<std::int64_t> all = all_indices(ctx.size());
    UnitReport row;
    row.index = unit.index;
    row.layers = unit.q_layers;
    row.obj_before = objective_at_selection(slice, dist, middle_selection(dist), ctx, all);

    const OptimizeResult res = optimize_unit(slice, dist, ctx, cfg, unit.index);
    row.obj_after = objective_at_selection(slice, dist, res.selection, ctx, all);
    row.steps = cfg.steps;
    row.final_temperature = res.final_temperature;
    row.min_max_prob = res.min_max_prob;

    commit_selection(q, unit, dist, res.selection);
    if (cfg.bits_a < 32) pact_learn_scales(q, unit, ctx, cfg);
    row.seconds = seconds_since(t0);
    report.units.push_back(std::move(row));
  }
  report.seconds = seconds_since(t_total);
  return {std::move(q), std::move(report)};
}

}  // namespace

TensorF forward_dataset(const ModelGraphF& g, const TensorF& inputs, int end, int chunk) {
  const std::int64_t n = inputs.dim(0);
  if (end == 0) return inputs;
  TensorF out;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t count = std::min<std::int64_t>(chunk, n - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    const TensorF part = forward_range(g, gather_rows(inputs, idx), 0, end);
    if (out.shape.empty()) {
      std::vector<std::int64_t> shape = part.shape;
      shape[0] = n;
      out = TensorF(shape);
    }
    std::copy(part.data.begin(), part.data.end(),
              out.data.begin() + static_cast<std::size_t>(start * (part.numel() / count)));
  }
  return out;
}

TapReference compute_tap_reference(const ModelGraphF& ref, const CalibData& data, int tap,
                                   bool labels_from_model, int chunk) {
  const std::int64_t n = data.inputs.dim(0);
  if (!labels_from_model && static_cast<std::int64_t>(data.labels.size()) != n)
    throw DataError("compute_tap_reference: labels missing for labeled Fisher mode");
  TapReference out;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t count = std::min<std::int64_t>(chunk, n - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Batch<float> batch;
    batch.inputs = gather_rows(data.inputs, idx);
    Trace<float> trace;
    const TensorF logits = forward(ref, batch.inputs, &trace);
    if (labels_from_model) {
      batch.labels.resize(static_cast<std::size_t>(count));
      const std::int64_t k = logits.dim(1);
      for (std::int64_t i = 0; i < count; ++i) {
        const float* row = logits.data.data() + i * k;
        int best = 0;
        for (std::int64_t j = 1; j < k; ++j)
          if (row[j] > row[best]) best = static_cast<int>(j);
        batch.labels[static_cast<std::size_t>(i)] = best;
      }
    } else {
      batch.labels.assign(data.labels.begin() + start, data.labels.begin() + start + count);
    }
    // seed = count turns the batch-mean gradient into per-sample gradients
    TensorF d_logits;
    (void)softmax_cross_entropy(logits, batch.labels, &d_logits, static_cast<double>(count));
    const Grads<float> grads = backward_range(ref, trace, d_logits, false);
    const TensorF& z = trace.outputs[static_cast<std::size_t>(tap)];
    const TensorF& dz = grads.d_output[static_cast<std::size_t>(tap)];
    if (out.targets.shape.empty()) {
      std::vector<std::int64_t> shape = z.shape;
      shape[0] = n;
      out.targets = TensorF(shape);
      out.fisher = TensorF(shape);
    }
    const std::int64_t row = z.numel() / count;
    std::copy(z.data.begin(), z.data.end(), out.targets.data.begin() + start * row);
    for (std::int64_t i = 0; i < z.numel(); ++i)
      out.fisher.data[static_cast<std::size_t>(start * row + i)] =
          dz.data[static_cast<std::size_t>(i)] * dz.data[static_cast<std::size_t>(i)];
  }
  return out;
}

TensorF fisher_weights(const ModelGraphF& ref, const CalibData& data, int tap,
                       bool labels_from_model, int chunk) {
  return compute_tap_reference(ref, data, tap, labels_from_model, chunk).fisher;
}

void ensure_act_scales(ModelGraphF& g, const TensorF& calib_inputs, int upto, int chunk) {
  for (int li = 0; li < upto; ++li) {
    LayerSpec<float>& l = g.layers[static_cast<std::size_t>(li)];
    if (l.kind != LayerKind::actquant || l.act_bits >= 32 || l.act_scale > 0) continue;
    const TensorF acts = forward_dataset(g, calib_inputs, li, chunk);
    std::vector<float> mags(acts.data.size());
    for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(acts.data[i]);
    const std::size_t k =
        static_cast<std::size_t>(0.999 * static_cast<double>(mags.size() - 1));
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
    // the 99.9th percentile sets the clip threshold; the step follows from it
    const float qmax = static_cast<float>(CodeRange{l.act_bits}.hi());
    l.act_scale = std::max(mags[k] / qmax, 1e-6f);
  }
}

int pact_learn_scales(ModelGraphF& g, const Unit& unit, const UnitContext<float>& ctx,
                      const CalibConfig& cfg) {
  UnitSlice<float> slice = make_unit_slice(g, unit);
  std::vector<int> fq_locals;
  for (int i = 0; i < static_cast<int>(slice.net.layers.size()); ++i) {
    const LayerSpec<float>& l = slice.net.layers[static_cast<std::size_t>(i)];
    if (l.kind == LayerKind::actquant && l.act_bits < 32) fq_locals.push_back(i);
  }
  if (fq_locals.empty()) return 0;
  Grads<float> grads;
  // same normalization as the logit optimizer: lr_scale is the starting
  // per-step RMS movement of the scales
  double lr = 0;
  for (int step = 0; step < cfg.pact_steps; ++step) {
    const std::vector<std::int64_t> idx = shard_indices(step, cfg.shard_size, ctx.size());
    (void)unit_objective(slice, ctx, idx, &grads);
    if (step == 0) {
      double sq = 0, mag = 0;
      for (int local : fq_locals) {
        const double g = grads.layers[static_cast<std::size_t>(local)].act_scale;
        sq += g * g;
        mag += std::abs(slice.net.layers[static_cast<std::size_t>(local)].act_scale);
      }
      const double rms = std::sqrt(sq / static_cast<double>(fq_locals.size()));
      mag /= static_cast<double>(fq_locals.size());
      lr = rms > 0 ? static_cast<double>(cfg.lr_scale) * mag / rms : 0.0;
    }
    for (int local : fq_locals) {
      float& s = slice.net.layers[static_cast<std::size_t>(local)].act_scale;
      s = std::max(1e-6f,
                   s - static_cast<float>(lr) *
                           grads.layers[static_cast<std::size_t>(local)].act_scale);
    }
  }
  for (int local : fq_locals)
    g.layers[static_cast<std::size_t>(unit.span_begin + local)].act_scale =
        slice.net.layers[static_cast<std::size_t>(local)].act_scale;
  return static_cast<int>(fq_locals.size());
}

CalibOutcome calibrate_unitwise(const ModelGraphF& folded, const CalibData& data,
                                const CalibConfig& cfg) {
  return run_calibration(folded, data, cfg, cfg.unit_size);
}

CalibOutcome calibrate_layerwise(const ModelGraphF& folded, const CalibData& data,
                                 const CalibConfig& cfg) {
  return run_calibration(folded, data, cfg, 1);
}

CalibOutcome calibrate_rtn(const ModelGraphF& folded, const CalibData& data,
                           const CalibConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ModelGraphF q = cfg.bits_a < 32 ? insert_act_quant(folded, cfg.bits_a) : folded;
  quantize_graph_rtn(q, cfg.bits_w);
  if (cfg.bits_a < 32)
    ensure_act_scales(q, data.inputs, static_cast<int>(q.layers.size()), cfg.chunk);
  CalibReport report;
  report.input_propagation = cfg.propagate_quantized ? "quantized" : "float";
  report.fisher_label_source = cfg.labels_from_model ? "model_argmax" : "dataset";
  report.act_quant = cfg.bits_a < 32;
  report.seconds = seconds_since(t0);
  return {std::move(q), std::move(report)};
}

}  // namespace uq
