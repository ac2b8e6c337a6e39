#pragma once

#include "unitquant/model.hpp"
#include "unitquant/ops.hpp"

namespace uq {

enum class LossKind { cross_entropy, squared_error };

/// Recorded forward pass over a layer range. Layer outputs are indexed by
/// graph layer id; outputs[i] is the output of layer i (the pre-activation of
/// a conv/linear layer). Backward requires the trace of a prior forward.
template <Scalar S>
struct Trace {
  Tensor<S> input;
  int begin = 0;
  int end = 0;  // exclusive
  bool ran = false;
  std::vector<Tensor<S>> outputs;
  std::vector<std::vector<S>> conv_patches;
  std::vector<std::vector<std::int64_t>> pool_argmax;
  std::vector<BatchNormCache<S>> bn;
  std::vector<std::vector<std::int8_t>> fq_mask;

  void reset(int nlayers, int begin_, int end_) {
    begin = begin_;
    end = end_;
    ran = false;
    outputs.assign(static_cast<std::size_t>(nlayers), Tensor<S>());
    conv_patches.assign(static_cast<std::size_t>(nlayers), {});
    pool_argmax.assign(static_cast<std::size_t>(nlayers), {});
    bn.assign(static_cast<std::size_t>(nlayers), {});
    fq_mask.assign(static_cast<std::size_t>(nlayers), {});
  }
};

template <Scalar S>
struct LayerGrads {
  Tensor<S> weight, bias, gamma, beta;
  S act_scale = S(0);
};

/// Gradients of the scalar loss: one slot per graph layer for parameters,
/// d_output[i] = dL/d(output of layer i) (pre-activation gradients for
/// conv/linear layers), and optionally dL/d(range input).
template <Scalar S>
struct Grads {
  std::vector<LayerGrads<S>> layers;
  std::vector<Tensor<S>> d_output;
  Tensor<S> d_input;
};

template <Scalar S>
Tensor<S> apply_layer(const LayerSpec<S>& l, const Tensor<S>& x, bool training, int idx,
                      Trace<S>* trace) {
  switch (l.kind) {
    case LayerKind::conv:
      return conv2d(x, l.weight, l.bias, l.stride, l.pad,
                    trace ? &trace->conv_patches[static_cast<std::size_t>(idx)] : nullptr);
    case LayerKind::linear:
      return linear(x, l.weight, l.bias);
    case LayerKind::relu:
      return relu(x);
    case LayerKind::maxpool:
      return maxpool2d(x, l.kernel, l.stride,
                       trace ? &trace->pool_argmax[static_cast<std::size_t>(idx)] : nullptr);
    case LayerKind::avgpool:
      return avgpool2d(x, l.kernel, l.stride);
    case LayerKind::flatten:
      return flatten(x);
    case LayerKind::actquant:
      if (l.act_bits >= 32) return x;
      return fake_quant_act(x, l.act_scale, l.act_bits,
                            trace ? &trace->fq_mask[static_cast<std::size_t>(idx)] : nullptr);
    case LayerKind::batchnorm:
      if (training)
        throw StateError("apply_layer: training batchnorm requires forward_train");
      return batchnorm_eval(x, l.gamma, l.beta, l.running_mean, l.running_var, l.eps);
  }
  throw StateError("apply_layer: unreachable");
}

/// Inference-mode forward over layers [begin, end).
template <Scalar S>
Tensor<S> forward_range(const ModelGraph<S>& g, const Tensor<S>& x, int begin, int end,
                        Trace<S>* trace = nullptr) {
  if (trace) {
    trace->reset(static_cast<int>(g.layers.size()), begin, end);
    trace->input = x;
  }
  Tensor<S> cur = x;
  for (int i = begin; i < end; ++i) {
    cur = apply_layer(g.layers[static_cast<std::size_t>(i)], cur, false, i, trace);
    if (trace) trace->outputs[static_cast<std::size_t>(i)] = cur;
  }
  if (trace) trace->ran = true;
  return cur;
}

template <Scalar S>
Tensor<S> forward(const ModelGraph<S>& g, const Tensor<S>& x, Trace<S>* trace = nullptr) {
  return forward_range(g, x, 0, static_cast<int>(g.layers.size()), trace);
}

/// Training-mode forward (batch statistics in batchnorm, running stats
/// updated in place).
template <Scalar S>
Tensor<S> forward_train(ModelGraph<S>& g, const Tensor<S>& x, Trace<S>& trace,
                        double bn_momentum = 0.1) {
  const int end = static_cast<int>(g.layers.size());
  trace.reset(end, 0, end);
  trace.input = x;
  Tensor<S> cur = x;
  for (int i = 0; i < end; ++i) {
    LayerSpec<S>& l = g.layers[static_cast<std::size_t>(i)];
    if (l.kind == LayerKind::batchnorm) {
      cur = batchnorm_train(cur, l.gamma, l.beta, l.running_mean, l.running_var, l.eps,
                            bn_momentum, &trace.bn[static_cast<std::size_t>(i)]);
    } else {
      cur = apply_layer(l, cur, true, i, &trace);
    }
    trace.outputs[static_cast<std::size_t>(i)] = cur;
  }
  trace.ran = true;
  return cur;
}

/// Reverse sweep over the traced range. `d_last` is dL/d(output of layer
/// end-1). Gradient of the range input is filled only when requested.
template <Scalar S>
Grads<S> backward_range(const ModelGraph<S>& g, const Trace<S>& trace, const Tensor<S>& d_last,
                        bool need_input_grad = false) {
  if (!trace.ran) throw StateError("backward_range: no recorded forward pass");
  Grads<S> grads;
  grads.layers.resize(g.layers.size());
  grads.d_output.assign(g.layers.size(), Tensor<S>());
  Tensor<S> cur = d_last;
  for (int i = trace.end - 1; i >= trace.begin; --i) {
    const std::size_t si = static_cast<std::size_t>(i);
    grads.d_output[si] = cur;
    const LayerSpec<S>& l = g.layers[si];
    const Tensor<S>& x = i == trace.begin ? trace.input : trace.outputs[si - 1];
    const bool want_dx = need_input_grad || i > trace.begin;
    switch (l.kind) {
      case LayerKind::conv: {
        Tensor<S> dx;
        conv2d_backward(x, l.weight, l.stride, l.pad, cur, trace.conv_patches[si],
                        want_dx ? &dx : nullptr, grads.layers[si].weight, grads.layers[si].bias);
        cur = std::move(dx);
        break;
      }
      case LayerKind::linear: {
        Tensor<S> dx;
        linear_backward(x, l.weight, cur, want_dx ? &dx : nullptr, grads.layers[si].weight,
                        grads.layers[si].bias);
        cur = std::move(dx);
        break;
      }
      case LayerKind::relu:
        cur = relu_backward(x, cur);
        break;
      case LayerKind::maxpool:
        cur = maxpool2d_backward(x, cur, trace.pool_argmax[si]);
        break;
      case LayerKind::avgpool:
        cur = avgpool2d_backward(x, cur, l.kernel, l.stride);
        break;
      case LayerKind::flatten: {
        Tensor<S> dx = cur;
        dx.shape = x.shape;
        cur = std::move(dx);
        break;
      }
      case LayerKind::actquant:
        if (l.act_bits < 32)
          cur = fake_quant_act_backward(cur, trace.fq_mask[si], &grads.layers[si].act_scale);
        break;
      case LayerKind::batchnorm: {
        if (trace.bn[si].xhat.numel() == 0)
          throw StateError("backward_range: batchnorm backward requires a training trace");
        Tensor<S> dx;
        batchnorm_backward(cur, l.gamma, trace.bn[si], dx, grads.layers[si].gamma,
                           grads.layers[si].beta);
        cur = std::move(dx);
        break;
      }
    }
  }
  if (need_input_grad) grads.d_input = std::move(cur);
  return grads;
}

template <Scalar S>
double loss_forward(const Tensor<S>& output, const Batch<S>& batch, LossKind kind,
                    Tensor<S>* d_output = nullptr, double seed = 1.0) {
  if (kind == LossKind::cross_entropy)
    return softmax_cross_entropy(output, batch.labels, d_output, seed);
  return squared_error(output, batch.targets, d_output, seed);
}

/// Full forward + reverse pass: returns the loss, parameter gradients and
/// every layer's output gradient. `seed` backpropagates seed * loss.
template <Scalar S>
double backward(const ModelGraph<S>& g, const Batch<S>& batch, LossKind kind, Grads<S>& grads,
                double seed = 1.0, Trace<S>* trace_out = nullptr) {
  Trace<S> local;
  Trace<S>& trace = trace_out ? *trace_out : local;
  const Tensor<S> out = forward(g, batch.inputs, &trace);
  Tensor<S> d_out;
  const double loss = loss_forward(out, batch, kind, &d_out, seed);
  grads = backward_range(g, trace, d_out, false);
  return loss;
}

/// Training variant of backward(): batchnorm uses batch statistics.
template <Scalar S>
double backward_train(ModelGraph<S>& g, const Batch<S>& batch, LossKind kind, Grads<S>& grads,
                      double seed = 1.0) {
  Trace<S> trace;
  const Tensor<S> out = forward_train(g, batch.inputs, trace);
  Tensor<S> d_out;
  const double loss = loss_forward(out, batch, kind, &d_out, seed);
  grads = backward_range(g, trace, d_out, false);
  return loss;
}

}  // namespace uq
