#include "unitquant/oracle.hpp"

#include <cmath>
#include <memory>

namespace uq {

namespace {

// 1e-4 keeps the O(h^2) truncation asymmetry of Hessian blocks under the
// 1e-6 symmetry tolerance; gradient checks use the coarser 1e-3 step.
double fd_step(double w) { return 1e-4 * std::max(1.0, std::abs(w)); }

}  // namespace

WeightLayout make_weight_layout(const ModelGraphD& g) {
  WeightLayout layout;
  layout.offsets.push_back(0);
  for (int i = 0; i < static_cast<int>(g.layers.size()); ++i) {
    const auto& l = g.layers[static_cast<std::size_t>(i)];
    if (!l.parametric()) continue;
    layout.layer_indices.push_back(i);
    layout.offsets.push_back(layout.offsets.back() + l.weight.numel());
  }
  layout.total = layout.offsets.back();
  return layout;
}

Eigen::VectorXd pack_weights(const ModelGraphD& g, const WeightLayout& layout) {
  Eigen::VectorXd w(layout.total);
  for (int li = 0; li < layout.layer_count(); ++li) {
    const auto& t = g.layers[static_cast<std::size_t>(layout.layer_indices[li])].weight;
    for (std::int64_t e = 0; e < t.numel(); ++e)
      w[layout.offsets[static_cast<std::size_t>(li)] + e] = t.data[static_cast<std::size_t>(e)];
  }
  return w;
}

void unpack_weights(ModelGraphD& g, const WeightLayout& layout, const Eigen::VectorXd& w) {
  for (int li = 0; li < layout.layer_count(); ++li) {
    auto& t = g.layers[static_cast<std::size_t>(layout.layer_indices[li])].weight;
    for (std::int64_t e = 0; e < t.numel(); ++e)
      t.data[static_cast<std::size_t>(e)] = w[layout.offsets[static_cast<std::size_t>(li)] + e];
  }
}

GraphOracle make_graph_oracle(const ModelGraphD& g, const Batch<double>& batch, LossKind kind) {
  GraphOracle oracle;
  oracle.layout = make_weight_layout(g);
  auto state = std::make_shared<ModelGraphD>(g);
  const WeightLayout layout = oracle.layout;
  oracle.loss = [state, layout, batch, kind](const Eigen::VectorXd& w) {
    unpack_weights(*state, layout, w);
    const TensorD out = forward(*state, batch.inputs);
    return loss_forward<double>(out, batch, kind);
  };
  oracle.grad = [state, layout, batch, kind](const Eigen::VectorXd& w) {
    unpack_weights(*state, layout, w);
    Grads<double> grads;
    (void)backward(*state, batch, kind, grads);
    Eigen::VectorXd out(layout.total);
    for (int li = 0; li < layout.layer_count(); ++li) {
      const auto& t = grads.layers[static_cast<std::size_t>(layout.layer_indices[li])].weight;
      for (std::int64_t e = 0; e < t.numel(); ++e)
        out[layout.offsets[static_cast<std::size_t>(li)] + e] = t.data[static_cast<std::size_t>(e)];
    }
    return out;
  };
  return oracle;
}

Eigen::MatrixXd hessian_fd_dense(const GradFn& grad, const Eigen::VectorXd& w0) {
  const std::int64_t n = w0.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd w = w0;
  for (std::int64_t q = 0; q < n; ++q) {
    const double step = fd_step(w0[q]);
    w[q] = w0[q] + step;
    const Eigen::VectorXd gp = grad(w);
    w[q] = w0[q] - step;
    const Eigen::VectorXd gm = grad(w);
    w[q] = w0[q];
    h.col(q) = (gp - gm) / (2.0 * step);
  }
  return h;
}

const Eigen::MatrixXd& HessianBlocks::at(int i, int j) const {
  const auto it = blocks.find({i, j});
  if (it == blocks.end())
    throw DataError("hessian block (" + std::to_string(i) + "," + std::to_string(j) +
                    ") was not computed");
  return it->second;
}

Eigen::MatrixXd hessian_fd(const ModelGraphD& g, const Batch<double>& batch, LossKind kind, int i,
                           int j) {
  const GraphOracle oracle = make_graph_oracle(g, batch, kind);
  const WeightLayout& layout = oracle.layout;
  if (i < 0 || j < 0 || i >= layout.layer_count() || j >= layout.layer_count())
    throw ParameterError("hessian_fd: layer pair out of range");
  const std::int64_t ni = layout.layer_size(i), nj = layout.layer_size(j);
  if (ni + nj > 2000)
    throw SizeError("hessian_fd: pair parameter count " + std::to_string(ni) + "+" +
                    std::to_string(nj) + " exceeds the dense budget of 2000");
  const Eigen::VectorXd w0 = pack_weights(g, layout);
  Eigen::MatrixXd h(ni, nj);
  Eigen::VectorXd w = w0;
  const std::int64_t oi = layout.offsets[static_cast<std::size_t>(i)];
  const std::int64_t oj = layout.offsets[static_cast<std::size_t>(j)];
  for (std::int64_t q = 0; q < nj; ++q) {
    const double step = fd_step(w0[oj + q]);
    w[oj + q] = w0[oj + q] + step;
    const Eigen::VectorXd gp = oracle.grad(w);
    w[oj + q] = w0[oj + q] - step;
    const Eigen::VectorXd gm = oracle.grad(w);
    w[oj + q] = w0[oj + q];
    h.col(q) = (gp.segment(oi, ni) - gm.segment(oi, ni)) / (2.0 * step);
  }
  return h;
}

HessianBlocks hessian_all(const ModelGraphD& g, const Batch<double>& batch, LossKind kind) {
  const GraphOracle oracle = make_graph_oracle(g, batch, kind);
  if (oracle.layout.total > 2000)
    throw SizeError("hessian_all: total weight count " + std::to_string(oracle.layout.total) +
                    " exceeds the dense budget of 2000");
  const Eigen::VectorXd w0 = pack_weights(g, oracle.layout);
  const Eigen::MatrixXd dense = hessian_fd_dense(oracle.grad, w0);
  HessianBlocks out;
  out.layout = oracle.layout;
  const int L = oracle.layout.layer_count();
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j)
      out.blocks[{i, j}] =
          dense.block(oracle.layout.offsets[static_cast<std::size_t>(i)],
                      oracle.layout.offsets[static_cast<std::size_t>(j)],
                      oracle.layout.layer_size(i), oracle.layout.layer_size(j));
  return out;
}

double symmetry_residual(const HessianBlocks& blocks) {
  double worst = 0;
  for (const auto& [key, h] : blocks.blocks) {
    const Eigen::MatrixXd& ht = blocks.at(key.second, key.first);
    const double denom = h.norm();
    if (denom == 0) continue;
    worst = std::max(worst, (h - ht.transpose()).norm() / denom);
  }
  return worst;
}

double taylor_increase(const Eigen::VectorXd& dw, const Eigen::VectorXd& g,
                       const Eigen::MatrixXd& H) {
  if (dw.size() != g.size() || H.rows() != dw.size() || H.cols() != dw.size())
    throw DimensionError("taylor_increase: perturbation length " + std::to_string(dw.size()) +
                         " vs gradient " + std::to_string(g.size()) + " and Hessian " +
                         std::to_string(H.rows()) + "x" + std::to_string(H.cols()));
  return dw.dot(g) + 0.5 * dw.dot(H * dw);
}

double quadratic_form(const Eigen::VectorXd& dw, const Eigen::MatrixXd& H) {
  if (H.rows() != dw.size() || H.cols() != dw.size())
    throw DimensionError("quadratic_form: perturbation length " + std::to_string(dw.size()) +
                         " vs Hessian " + std::to_string(H.rows()) + "x" +
                         std::to_string(H.cols()));
  return dw.dot(H * dw);
}

MassTable tridiagonal_mass(const HessianBlocks& blocks) {
  const int L = blocks.layout.layer_count();
  MassTable table;
  table.mean_frobenius.assign(static_cast<std::size_t>(L), 0.0);
  table.count.assign(static_cast<std::size_t>(L), 0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const int d = std::abs(i - j);
      table.mean_frobenius[static_cast<std::size_t>(d)] += blocks.at(i, j).norm();
      table.count[static_cast<std::size_t>(d)] += 1;
    }
  for (std::size_t d = 0; d < table.mean_frobenius.size(); ++d)
    if (table.count[d] > 0) table.mean_frobenius[d] /= table.count[d];
  return table;
}

BruteForceResult brute_force_unit(UnitSlice<float>& slice, const UnitDistributions<float>& dist,
                                  const UnitContext<float>& ctx) {
  std::int64_t n = 0;
  for (const auto& c : dist.candidates) n += c.size();
  if (n > 12)
    throw SizeError("brute_force_unit: " + std::to_string(n) +
                    " candidate weights exceed the exhaustive budget of 12");
  const std::vector<std::int64_t> all = all_indices(ctx.size());
  std::vector<std::vector<int>> sel(dist.candidates.size());
  for (std::size_t l = 0; l < dist.candidates.size(); ++l)
    sel[l].assign(static_cast<std::size_t>(dist.candidates[l].size()), 0);

  BruteForceResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const std::int64_t combos = static_cast<std::int64_t>(std::pow(3.0, static_cast<double>(n)));
  for (std::int64_t c = 0; c < combos; ++c) {
    const double obj = objective_at_selection(slice, dist, sel, ctx, all);
    if (obj < best.objective) {  // strict: lexicographically first minimizer wins
      best.objective = obj;
      best.selection = sel;
    }
    // odometer increment, last element fastest (lexicographic order)
    for (std::int64_t pos = n - 1; pos >= 0; --pos) {
      std::int64_t off = pos;
      std::size_t l = 0;
      while (off >= dist.candidates[l].size()) off -= dist.candidates[l++].size();
      int& digit = sel[l][static_cast<std::size_t>(off)];
      if (++digit < 3) break;
      digit = 0;
    }
  }
  return best;
}

Batch<double> select_smooth_batch(const ModelGraphD& g, const Tensor<double>& inputs,
                                  const std::vector<int>& labels, std::int64_t count,
                                  double margin) {
  const std::int64_t n = inputs.dim(0);
  const std::int64_t row = inputs.numel() / n;
  std::vector<std::int64_t> keep;
  for (std::int64_t s = 0; s < n && static_cast<std::int64_t>(keep.size()) < count; ++s) {
    Tensor<double> x(std::vector<std::int64_t>{1});
    x.shape = inputs.shape;
    x.shape[0] = 1;
    x.data.assign(inputs.data.begin() + s * row, inputs.data.begin() + (s + 1) * row);
    Trace<double> trace;
    (void)forward(g, x, &trace);
    bool smooth = true;
    for (std::size_t li = 0; li < g.layers.size() && smooth; ++li) {
      if (g.layers[li].kind != LayerKind::relu || li == 0) continue;
      for (double v : trace.outputs[li - 1].data)
        if (std::abs(v) < margin) {
          smooth = false;
          break;
        }
    }
    if (smooth) keep.push_back(s);
  }
  if (keep.empty()) throw DataError("select_smooth_batch: no samples clear the kink margin");
  Batch<double> batch;
  std::vector<std::int64_t> shape = inputs.shape;
  shape[0] = static_cast<std::int64_t>(keep.size());
  batch.inputs = Tensor<double>(shape);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy_n(inputs.data.begin() + keep[i] * row, row,
                batch.inputs.data.begin() + static_cast<std::int64_t>(i) * row);
    batch.labels.push_back(labels[static_cast<std::size_t>(keep[i])]);
  }
  return batch;
}

double jacobian_objective(const UnitSlice<double>& slice, const UnitContext<double>& ctx,
                          const std::vector<TensorD>& deltas) {
  if (deltas.size() != slice.q_local.size())
    throw DimensionError("jacobian_objective: need one delta tensor per quantizable layer");
  const std::int64_t n = ctx.size();
  const std::int64_t zdim = ctx.targets.numel() / n;
  std::int64_t wtotal = 0;
  for (const auto& d : deltas) wtotal += d.numel();
  if (zdim > 2000 || wtotal > 2000)
    throw SizeError("jacobian_objective: " + std::to_string(zdim) + "x" + std::to_string(wtotal) +
                    " Jacobian exceeds the 2000x2000 budget");

  UnitSlice<double> work = slice;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, zdim);
  for (std::size_t l = 0; l < deltas.size(); ++l) {
    TensorD& w = work.net.layers[static_cast<std::size_t>(work.q_local[l])].weight;
    if (w.shape != deltas[l].shape)
      throw DimensionError("jacobian_objective: delta shape " + shape_str(deltas[l].shape) +
                           " vs weight shape " + shape_str(w.shape));
    for (std::int64_t e = 0; e < w.numel(); ++e) {
      const double de = deltas[l].data[static_cast<std::size_t>(e)];
      if (de == 0) continue;
      const double w0 = w.data[static_cast<std::size_t>(e)];
      const double step = fd_step(w0);
      w.data[static_cast<std::size_t>(e)] = w0 + step;
      const TensorD zp = forward(work.net, ctx.inputs);
      w.data[static_cast<std::size_t>(e)] = w0 - step;
      const TensorD zm = forward(work.net, ctx.inputs);
      w.data[static_cast<std::size_t>(e)] = w0;
      const double coef = de / (2.0 * step);
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t j = 0; j < zdim; ++j)
          v(s, j) += coef * (zp.data[static_cast<std::size_t>(s * zdim + j)] -
                             zm.data[static_cast<std::size_t>(s * zdim + j)]);
    }
  }
  double obj = 0;
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t j = 0; j < zdim; ++j)
      obj += ctx.fisher.data[static_cast<std::size_t>(s * zdim + j)] * v(s, j) * v(s, j);
  return obj / static_cast<double>(n);
}

}  // namespace uq
