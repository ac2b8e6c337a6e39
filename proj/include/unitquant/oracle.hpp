#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "unitquant/calib.hpp"
#include "unitquant/graph.hpp"

namespace uq {

// All oracle arithmetic runs in float64: these routines exist to check the
// float32 system, so they must out-precision it.

using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using LossFn = std::function<double(const Eigen::VectorXd&)>;

/// Flattened weight layout over the parametric layers of a graph (weights
/// only, biases excluded).
struct WeightLayout {
  std::vector<int> layer_indices;        // graph indices of parametric layers
  std::vector<std::int64_t> offsets;     // size L+1, offsets into the flat vector
  std::int64_t total = 0;

  int layer_count() const { return static_cast<int>(layer_indices.size()); }
  std::int64_t layer_size(int i) const {
    return offsets[static_cast<std::size_t>(i) + 1] - offsets[static_cast<std::size_t>(i)];
  }
};

WeightLayout make_weight_layout(const ModelGraphD& g);
Eigen::VectorXd pack_weights(const ModelGraphD& g, const WeightLayout& layout);
void unpack_weights(ModelGraphD& g, const WeightLayout& layout, const Eigen::VectorXd& w);

/// Loss and weight-gradient closures over a graph; each call writes `w` into
/// a private copy of the graph and runs an inference-mode pass.
struct GraphOracle {
  WeightLayout layout;
  LossFn loss;
  GradFn grad;
};
GraphOracle make_graph_oracle(const ModelGraphD& g, const Batch<double>& batch, LossKind kind);

/// Central finite differences of a gradient: column q of the Hessian is
/// (g(w + h e_q) - g(w - h e_q)) / 2h with h = 1e-3 * max(1, |w_q|).
Eigen::MatrixXd hessian_fd_dense(const GradFn& grad, const Eigen::VectorXd& w0);

/// Layer-pair map of dense Hessian blocks.
struct HessianBlocks {
  WeightLayout layout;
  std::map<std::pair<int, int>, Eigen::MatrixXd> blocks;

  const Eigen::MatrixXd& at(int i, int j) const;
};

/// One block H^(i,j) of the weight Hessian of the batch loss. The combined
/// parameter count of the pair must stay within the dense budget (2000).
Eigen::MatrixXd hessian_fd(const ModelGraphD& g, const Batch<double>& batch, LossKind kind, int i,
                           int j);

/// Every block of the weight Hessian (total weight count <= 2000).
HessianBlocks hessian_all(const ModelGraphD& g, const Batch<double>& batch, LossKind kind);

/// Worst relative asymmetry max_{i,j} ||H(i,j) - H(j,i)^T||_F / ||H(i,j)||_F.
double symmetry_residual(const HessianBlocks& blocks);

/// Second-order Taylor prediction dw^T g + 1/2 dw^T H dw.
double taylor_increase(const Eigen::VectorXd& dw, const Eigen::VectorXd& g,
                       const Eigen::MatrixXd& H);

/// The bare quadratic dw^T H dw.
double quadratic_form(const Eigen::VectorXd& dw, const Eigen::MatrixXd& H);

/// Mean Frobenius norm of the blocks grouped by layer distance |i-j|.
struct MassTable {
  std::vector<double> mean_frobenius;
  std::vector<int> count;
};
MassTable tridiagonal_mass(const HessianBlocks& blocks);

struct BruteForceResult {
  std::vector<std::vector<int>> selection;
  double objective = 0;
};

/// Exhaustive 3^n sweep over a unit's candidate assignments (n <= 12); ties
/// resolve to the lexicographically first assignment.
BruteForceResult brute_force_unit(UnitSlice<float>& slice, const UnitDistributions<float>& dist,
                                  const UnitContext<float>& ctx);

/// First-order (Jacobian) form of the unit objective: per sample, the Fisher-
/// weighted squared norm of sum_k J[z/w_k] dw_k, with each Jacobian column
/// materialized by central differences of the tap.
double jacobian_objective(const UnitSlice<double>& slice, const UnitContext<double>& ctx,
                          const std::vector<TensorD>& deltas);

/// Up to `count` samples whose relu pre-activations stay at least `margin`
/// from zero. Finite differences of relu networks are only well posed away
/// from the kinks, so Hessian probes evaluate on such samples.
Batch<double> select_smooth_batch(const ModelGraphD& g, const Tensor<double>& inputs,
                                  const std::vector<int>& labels, std::int64_t count,
                                  double margin = 1e-2);

}  // namespace uq
