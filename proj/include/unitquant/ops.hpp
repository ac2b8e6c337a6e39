#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "unitquant/tensor.hpp"

namespace uq {

// ---------------------------------------------------------------------------
// conv2d: NCHW input, OIKK kernel, square kernel, floor output semantics.
// Lowered to one GEMM per sample over an im2col patch matrix.
// ---------------------------------------------------------------------------

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <Scalar S>
struct ConvDims {
  std::int64_t n, c, h, w, oc, k, oh, ow, stride, pad;
};

template <Scalar S>
ConvDims<S> conv_check(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                       int stride, int pad) {
  if (x.ndim() != 4)
    throw DimensionError("conv2d: input must be NCHW, got " + shape_str(x.shape));
  if (weight.ndim() != 4 || weight.dim(2) != weight.dim(3))
    throw DimensionError("conv2d: kernel must be OIKK with square K, got " +
                         shape_str(weight.shape));
  if (x.dim(1) != weight.dim(1))
    throw DimensionError("conv2d: input channel axis C=" + std::to_string(x.dim(1)) +
                         " does not match kernel input axis I=" + std::to_string(weight.dim(1)));
  if (bias.numel() != weight.dim(0))
    throw DimensionError("conv2d: bias axis " + std::to_string(bias.numel()) +
                         " does not match kernel output axis O=" + std::to_string(weight.dim(0)));
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  if (pad < 0) throw ParameterError("conv2d: pad must be >= 0");
  ConvDims<S> d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2),
                0,        0,        stride,   pad};
  d.oh = conv_out_dim(d.h, d.k, stride, pad);
  d.ow = conv_out_dim(d.w, d.k, stride, pad);
  if (d.oh < 1 || d.ow < 1)
    throw DimensionError("conv2d: kernel K=" + std::to_string(d.k) + " does not fit input " +
                         shape_str(x.shape) + " with pad " + std::to_string(pad));
  return d;
}

/// Patch matrix for one sample: (C*K*K) x (OH*OW).
template <Scalar S>
void im2col(const Tensor<S>& x, std::int64_t n, const ConvDims<S>& d, S* out) {
  const std::int64_t cols = d.oh * d.ow;
  const S* xp = x.data.data() + n * d.c * d.h * d.w;
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t ki = 0; ki < d.k; ++ki) {
      for (std::int64_t kj = 0; kj < d.k; ++kj) {
        S* row = out + ((c * d.k + ki) * d.k + kj) * cols;
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) {
            std::fill(row + oh * d.ow, row + (oh + 1) * d.ow, S(0));
            continue;
          }
          const S* src = xp + (c * d.h + ih) * d.w;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad + kj;
            row[oh * d.ow + ow] = (iw < 0 || iw >= d.w) ? S(0) : src[iw];
          }
        }
      }
    }
  }
}

/// Scatter-add of a patch-matrix gradient back onto the input image.
template <Scalar S>
void col2im_add(const S* cols_grad, const ConvDims<S>& d, std::int64_t n, Tensor<S>& dx) {
  const std::int64_t cols = d.oh * d.ow;
  S* xp = dx.data.data() + n * d.c * d.h * d.w;
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t ki = 0; ki < d.k; ++ki) {
      for (std::int64_t kj = 0; kj < d.k; ++kj) {
        const S* row = cols_grad + ((c * d.k + ki) * d.k + kj) * cols;
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) continue;
          S* dst = xp + (c * d.h + ih) * d.w;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.w) dst[iw] += row[oh * d.ow + ow];
          }
        }
      }
    }
  }
}

template <Scalar S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
                 int pad, std::vector<S>* patch_cache = nullptr) {
  const ConvDims<S> d = conv_check(x, weight, bias, stride, pad);
  const std::int64_t ckk = d.c * d.k * d.k, cols = d.oh * d.ow;
  Tensor<S> y({d.n, d.oc, d.oh, d.ow});
  std::vector<S> scratch;
  S* patches;
  if (patch_cache) {
    patch_cache->resize(static_cast<std::size_t>(d.n * ckk * cols));
    patches = patch_cache->data();
  } else {
    scratch.resize(static_cast<std::size_t>(ckk * cols));
    patches = scratch.data();
  }
  CMatMap<S> wm(weight.data.data(), d.oc, ckk);
  for (std::int64_t n = 0; n < d.n; ++n) {
    S* pn = patch_cache ? patches + n * ckk * cols : patches;
    im2col(x, n, d, pn);
    MatMap<S> yn(y.data.data() + n * d.oc * cols, d.oc, cols);
    yn.noalias() = wm * CMatMap<S>(pn, ckk, cols);
    for (std::int64_t o = 0; o < d.oc; ++o) yn.row(o).array() += bias.data[o];
  }
  return y;
}

/// Gradients of conv2d. `patches` must be the forward cache; dx may be null
/// when the input gradient is not needed.
template <Scalar S>
void conv2d_backward(const Tensor<S>& x, const Tensor<S>& weight, int stride, int pad,
                     const Tensor<S>& dy, const std::vector<S>& patches, Tensor<S>* dx,
                     Tensor<S>& dweight, Tensor<S>& dbias) {
  Tensor<S> bias_dummy({weight.dim(0)});
  const ConvDims<S> d = conv_check(x, weight, bias_dummy, stride, pad);
  const std::int64_t ckk = d.c * d.k * d.k, cols = d.oh * d.ow;
  dweight = Tensor<S>::zeros(weight.shape);
  dbias = Tensor<S>::zeros({d.oc});
  if (dx) *dx = Tensor<S>::zeros(x.shape);
  CMatMap<S> wm(weight.data.data(), d.oc, ckk);
  MatMap<S> dwm(dweight.data.data(), d.oc, ckk);
  MatX<S> dcols(ckk, cols);
  std::vector<double> bias_acc(static_cast<std::size_t>(d.oc), 0.0);
  for (std::int64_t n = 0; n < d.n; ++n) {
    CMatMap<S> dyn(dy.data.data() + n * d.oc * cols, d.oc, cols);
    CMatMap<S> pn(patches.data() + n * ckk * cols, ckk, cols);
    dwm.noalias() += dyn * pn.transpose();
    for (std::int64_t o = 0; o < d.oc; ++o) {
      const S* row = dy.data.data() + (n * d.oc + o) * cols;
      double acc = 0;  // sequential accumulation keeps results alignment-independent
      for (std::int64_t i = 0; i < cols; ++i) acc += row[i];
      bias_acc[static_cast<std::size_t>(o)] += acc;
    }
    if (dx) {
      dcols.noalias() = wm.transpose() * dyn;
      col2im_add(dcols.data(), d, n, *dx);
    }
  }
  for (std::int64_t o = 0; o < d.oc; ++o)
    dbias.data[static_cast<std::size_t>(o)] = static_cast<S>(bias_acc[static_cast<std::size_t>(o)]);
}

// ---------------------------------------------------------------------------
// linear: y = x W^T + b with x (N,D), W (M,D).
// ---------------------------------------------------------------------------

template <Scalar S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (x.ndim() != 2) throw DimensionError("linear: input must be (N,D), got " + shape_str(x.shape));
  if (weight.ndim() != 2 || weight.dim(1) != x.dim(1))
    throw DimensionError("linear: inner axis D=" + std::to_string(x.dim(1)) +
                         " does not match weight axis " + std::to_string(weight.dim(1)));
  if (bias.numel() != weight.dim(0))
    throw DimensionError("linear: bias axis " + std::to_string(bias.numel()) +
                         " does not match output axis M=" + std::to_string(weight.dim(0)));
  const std::int64_t n = x.dim(0), dI = x.dim(1), m = weight.dim(0);
  Tensor<S> y({n, m});
  y.mat(n, m).noalias() = x.mat(n, dI) * weight.mat(m, dI).transpose();
  y.mat(n, m).rowwise() += CVecMap<S>(bias.data.data(), m).transpose();
  return y;
}

template <Scalar S>
void linear_backward(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& dy,
                     Tensor<S>* dx, Tensor<S>& dweight, Tensor<S>& dbias) {
  const std::int64_t n = x.dim(0), dI = x.dim(1), m = weight.dim(0);
  dweight = Tensor<S>::zeros(weight.shape);
  dbias = Tensor<S>::zeros({m});
  dweight.mat(m, dI).noalias() = dy.mat(n, m).transpose() * x.mat(n, dI);
  for (std::int64_t j = 0; j < m; ++j) {
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += dy.data[static_cast<std::size_t>(i * m + j)];
    dbias.data[static_cast<std::size_t>(j)] = static_cast<S>(acc);
  }
  if (dx) {
    *dx = Tensor<S>::zeros(x.shape);
    dx->mat(n, dI).noalias() = dy.mat(n, m) * weight.mat(m, dI);
  }
}

// ---------------------------------------------------------------------------
// relu and pooling. relu subgradient at 0 is 0.
// ---------------------------------------------------------------------------

template <Scalar S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.data) v = v > S(0) ? v : S(0);
  return y;
}

template <Scalar S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
  Tensor<S> dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(x.data[i] > S(0))) dx.data[i] = S(0);
  return dx;
}

template <Scalar S>
void pool_check(const Tensor<S>& x, int k, int stride) {
  if (x.ndim() != 4)
    throw DimensionError("pool: input must be NCHW, got " + shape_str(x.shape));
  if (k < 1 || stride < 1) throw ParameterError("pool: kernel and stride must be >= 1");
  if (x.dim(2) < k || x.dim(3) < k)
    throw DimensionError("pool: window " + std::to_string(k) + " does not fit input " +
                         shape_str(x.shape));
}

template <Scalar S>
Tensor<S> maxpool2d(const Tensor<S>& x, int k, int stride,
                    std::vector<std::int64_t>* argmax = nullptr) {
  pool_check(x, k, stride);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Tensor<S> y({n, c, oh, ow});
  if (argmax) argmax->resize(static_cast<std::size_t>(y.numel()));
  std::int64_t oi = 0;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j, ++oi) {
          S best = x.at(ni, ci, i * stride, j * stride);
          std::int64_t besti = ((ni * c + ci) * h + i * stride) * w + j * stride;
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) {
              const S v = x.at(ni, ci, i * stride + a, j * stride + b);
              if (v > best) {  // first maximum wins: deterministic ties
                best = v;
                besti = ((ni * c + ci) * h + i * stride + a) * w + j * stride + b;
              }
            }
          y.data[static_cast<std::size_t>(oi)] = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(oi)] = besti;
        }
  return y;
}

template <Scalar S>
Tensor<S> maxpool2d_backward(const Tensor<S>& x, const Tensor<S>& dy,
                             const std::vector<std::int64_t>& argmax) {
  Tensor<S> dx = Tensor<S>::zeros(x.shape);
  for (std::int64_t i = 0; i < dy.numel(); ++i)
    dx.data[static_cast<std::size_t>(argmax[static_cast<std::size_t>(i)])] +=
        dy.data[static_cast<std::size_t>(i)];
  return dx;
}

template <Scalar S>
Tensor<S> avgpool2d(const Tensor<S>& x, int k, int stride) {
  pool_check(x, k, stride);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Tensor<S> y({n, c, oh, ow});
  const S inv = S(1) / static_cast<S>(k * k);
  std::int64_t oi = 0;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j, ++oi) {
          double acc = 0;
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b)
              acc += static_cast<double>(x.at(ni, ci, i * stride + a, j * stride + b));
          y.data[static_cast<std::size_t>(oi)] = static_cast<S>(acc) * inv;
        }
  return y;
}

template <Scalar S>
Tensor<S> avgpool2d_backward(const Tensor<S>& x, const Tensor<S>& dy, int k, int stride) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Tensor<S> dx = Tensor<S>::zeros(x.shape);
  const S inv = S(1) / static_cast<S>(k * k);
  std::int64_t oi = 0;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j, ++oi) {
          const S g = dy.data[static_cast<std::size_t>(oi)] * inv;
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) dx.at(ni, ci, i * stride + a, j * stride + b) += g;
        }
  return dx;
}

template <Scalar S>
Tensor<S> flatten(const Tensor<S>& x) {
  Tensor<S> y = x;
  y.shape = {x.dim(0), x.numel() / x.dim(0)};
  return y;
}

// ---------------------------------------------------------------------------
// batch normalization, per channel over N*H*W.
// ---------------------------------------------------------------------------

template <Scalar S>
struct BatchNormCache {
  Tensor<S> xhat;
  std::vector<S> invstd;
};

template <Scalar S>
Tensor<S> batchnorm_train(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          Tensor<S>& running_mean, Tensor<S>& running_var, double eps,
                          double momentum, BatchNormCache<S>* cache) {
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::int64_t m = n * hw;
  Tensor<S> y(x.shape);
  if (cache) {
    cache->xhat = Tensor<S>(x.shape);
    cache->invstd.assign(static_cast<std::size_t>(c), S(0));
  }
  for (std::int64_t ci = 0; ci < c; ++ci) {
    double sum = 0, sq = 0;
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const S* p = x.data.data() + (ni * c + ci) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        sum += p[i];
        sq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double mean = sum / static_cast<double>(m);
    const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
    const S invstd = static_cast<S>(1.0 / std::sqrt(var + eps));
    const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
    running_mean.data[ci] =
        static_cast<S>((1.0 - momentum) * running_mean.data[ci] + momentum * mean);
    running_var.data[ci] =
        static_cast<S>((1.0 - momentum) * running_var.data[ci] + momentum * unbiased);
    if (cache) cache->invstd[static_cast<std::size_t>(ci)] = invstd;
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const S* p = x.data.data() + (ni * c + ci) * hw;
      S* q = y.data.data() + (ni * c + ci) * hw;
      S* xh = cache ? cache->xhat.data.data() + (ni * c + ci) * hw : nullptr;
      for (std::int64_t i = 0; i < hw; ++i) {
        const S h = (p[i] - static_cast<S>(mean)) * invstd;
        if (xh) xh[i] = h;
        q[i] = gamma.data[ci] * h + beta.data[ci];
      }
    }
  }
  return y;
}

template <Scalar S>
Tensor<S> batchnorm_eval(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                         const Tensor<S>& running_mean, const Tensor<S>& running_var, double eps) {
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<S> y(x.shape);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const S invstd = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var.data[ci]) + eps));
    const S a = gamma.data[ci] * invstd;
    const S b = beta.data[ci] - a * running_mean.data[ci];
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const S* p = x.data.data() + (ni * c + ci) * hw;
      S* q = y.data.data() + (ni * c + ci) * hw;
      for (std::int64_t i = 0; i < hw; ++i) q[i] = a * p[i] + b;
    }
  }
  return y;
}

template <Scalar S>
void batchnorm_backward(const Tensor<S>& dy, const Tensor<S>& gamma, const BatchNormCache<S>& cache,
                        Tensor<S>& dx, Tensor<S>& dgamma, Tensor<S>& dbeta) {
  const std::int64_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  const std::int64_t m = n * hw;
  dx = Tensor<S>(dy.shape);
  dgamma = Tensor<S>::zeros({c});
  dbeta = Tensor<S>::zeros({c});
  for (std::int64_t ci = 0; ci < c; ++ci) {
    double sg = 0, sb = 0;
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const S* g = dy.data.data() + (ni * c + ci) * hw;
      const S* xh = cache.xhat.data.data() + (ni * c + ci) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        sg += static_cast<double>(g[i]) * xh[i];
        sb += g[i];
      }
    }
    dgamma.data[ci] = static_cast<S>(sg);
    dbeta.data[ci] = static_cast<S>(sb);
    const S scale = gamma.data[ci] * cache.invstd[static_cast<std::size_t>(ci)] / static_cast<S>(m);
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const S* g = dy.data.data() + (ni * c + ci) * hw;
      const S* xh = cache.xhat.data.data() + (ni * c + ci) * hw;
      S* d = dx.data.data() + (ni * c + ci) * hw;
      for (std::int64_t i = 0; i < hw; ++i)
        d[i] = scale * (static_cast<S>(m) * g[i] - static_cast<S>(sb) - xh[i] * static_cast<S>(sg));
    }
  }
  return;
}

// ---------------------------------------------------------------------------
// symmetric fake quantization of activations, per tensor.
// Gradient contract: straight-through inside the clip range, zero outside;
// d/dscale = sign(x) for clipped elements, 0 for unclipped ones.
// ---------------------------------------------------------------------------

template <Scalar S>
Tensor<S> fake_quant_act(const Tensor<S>& x, S scale, int bits,
                         std::vector<std::int8_t>* clip_mask = nullptr) {
  if (scale <= S(0)) throw ParameterError("fake_quant_act: scale must be positive");
  if (bits < 2 || bits > 16) throw ParameterError("fake_quant_act: bits must be in [2,16]");
  const double lo = -std::pow(2.0, bits - 1), hi = std::pow(2.0, bits - 1) - 1;
  Tensor<S> y(x.shape);
  if (clip_mask) clip_mask->assign(x.data.size(), 0);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double code = std::round(static_cast<double>(x.data[i]) / static_cast<double>(scale));
    if (code < lo) {
      y.data[i] = scale * static_cast<S>(lo);
      if (clip_mask) (*clip_mask)[i] = -1;
    } else if (code > hi) {
      y.data[i] = scale * static_cast<S>(hi);
      if (clip_mask) (*clip_mask)[i] = 1;
    } else {
      y.data[i] = scale * static_cast<S>(code);
    }
  }
  return y;
}

template <Scalar S>
Tensor<S> fake_quant_act_backward(const Tensor<S>& dy, const std::vector<std::int8_t>& clip_mask,
                                  S* dscale) {
  Tensor<S> dx = dy;
  double ds = 0;
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (clip_mask[i] != 0) {
      dx.data[i] = S(0);
      ds += static_cast<double>(clip_mask[i]) * dy.data[i];
    }
  }
  if (dscale) *dscale = static_cast<S>(ds);
  return dx;
}

// ---------------------------------------------------------------------------
// losses (mean over the batch).
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood with max-subtracted log-sum-exp.
/// `seed` scales the returned gradient (backward of seed * loss).
template <Scalar S>
double softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                             Tensor<S>* dlogits = nullptr, double seed = 1.0) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (k < 2) throw DimensionError("softmax_cross_entropy: needs at least 2 classes");
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DataError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= k) throw DataError("softmax_cross_entropy: label out of range");
  if (dlogits) *dlogits = Tensor<S>::zeros(logits.shape);
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const S* row = logits.data.data() + i * k;
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0;
    for (std::int64_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(sum);
    total += lse - static_cast<double>(row[labels[static_cast<std::size_t>(i)]]);
    if (dlogits) {
      S* g = dlogits->data.data() + i * k;
      const double inv = seed / (sum * static_cast<double>(n));
      for (std::int64_t j = 0; j < k; ++j)
        g[j] = static_cast<S>(std::exp(static_cast<double>(row[j]) - mx) * inv);
      g[labels[static_cast<std::size_t>(i)]] -= static_cast<S>(seed / static_cast<double>(n));
    }
  }
  return total / static_cast<double>(n);
}

/// 0.5 * ||y - t||^2 averaged over the batch dimension.
template <Scalar S>
double squared_error(const Tensor<S>& pred, const Tensor<S>& target, Tensor<S>* dpred = nullptr,
                     double seed = 1.0) {
  if (pred.shape != target.shape)
    throw DimensionError("squared_error: prediction " + shape_str(pred.shape) +
                         " vs target " + shape_str(target.shape));
  const std::int64_t n = pred.dim(0);
  if (dpred) *dpred = Tensor<S>::zeros(pred.shape);
  double total = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double r = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    total += 0.5 * r * r;
    if (dpred) dpred->data[i] = static_cast<S>(seed * r / static_cast<double>(n));
  }
  return total / static_cast<double>(n);
}

}  // namespace uq
