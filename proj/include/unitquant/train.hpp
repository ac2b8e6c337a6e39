#pragma once

#include "unitquant/graph.hpp"
#include "unitquant/idx.hpp"

namespace uq {

/// The desk-scale reference CNN:
/// conv16-bn-relu-maxpool / conv32-bn-relu-maxpool / conv64-bn-relu x3
/// (avgpool after the last) / flatten-linear(K).
ModelGraphF build_reference_cnn(const std::vector<std::int64_t>& input_shape, int classes,
                                std::uint64_t seed);

/// linear(in,hidden)-relu-linear(hidden,hidden)-relu-linear(hidden,classes).
ModelGraphF build_mlp(std::int64_t in, std::int64_t hidden, int classes, std::uint64_t seed);

/// Gaussian class clusters for self-contained oracle experiments.
Dataset make_blobs(std::int64_t count, std::int64_t dim, int classes, std::uint64_t seed,
                   double spread = 0.35);

struct TrainConfig {
  int epochs = 3;
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int batch = 64;
  std::uint64_t seed = 0;
  std::int64_t limit = 0;  // 0 = use the full training split
  bool verbose = false;
};

struct TrainResult {
  double final_loss = 0;
  double test_top1 = 0;
};

/// SGD with momentum and weight decay; deterministic under a fixed seed.
TrainResult train_model(ModelGraphF& g, const Dataset& train, const Dataset& test,
                        const TrainConfig& cfg);

/// MLP inputs are flat vectors; flattens image datasets on the fly.
Dataset flatten_dataset(const Dataset& d);

struct Accuracy {
  double top1 = 0;
  double topk = 0;
  int k = 5;
};

/// top-1 / top-k accuracy; a label counts at k when fewer than k classes rank
/// strictly above it, ties broken toward the lower class index.
Accuracy evaluate(const ModelGraphF& g, const Dataset& data, int topk = 5, int chunk = 256);

}  // namespace uq
