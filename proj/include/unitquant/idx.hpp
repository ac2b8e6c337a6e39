#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unitquant/tensor.hpp"

namespace uq {

// IDX format: big-endian magic (0x00000803 for 3-d uint8 images, 0x00000801
// for 1-d uint8 labels), big-endian dimension sizes, raw uint8 payload.

struct RawImages {
  std::int64_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

RawImages load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);
void save_idx_images(const std::string& path, const RawImages& images);
void save_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Labeled image set, pixels scaled to [0,1] then normalized by mean/std.
struct Dataset {
  TensorF images;  // N x 1 x H x W
  std::vector<int> labels;
  int classes = 0;
};

Dataset load_dataset(const std::string& images_path, const std::string& labels_path,
                     float norm_mean, float norm_std);

/// MNIST-style naming under a root directory: {train-,t10k-}images-idx3-ubyte
/// and matching labels files. `split` is "train" or "test".
Dataset load_split(const std::string& root, const std::string& split, float norm_mean,
                   float norm_std);

Dataset take(const Dataset& d, std::int64_t count);

}  // namespace uq
