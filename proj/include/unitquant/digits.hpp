#pragma once

#include <string>

#include "unitquant/idx.hpp"

namespace uq {

// Deterministic handwritten-style digit renderer: stroke glyphs 0-9 drawn
// with per-sample random rotation, scale, shear, translation, thickness and
// pixel noise, emitted as 28x28 grayscale IDX files.

struct DigitSet {
  RawImages images;
  std::vector<std::uint8_t> labels;
};

DigitSet make_digits(std::int64_t count, std::uint64_t seed);

/// Write train/test IDX files under `dir` using MNIST-style names.
void write_digit_dataset(const std::string& dir, std::int64_t train_count,
                         std::int64_t test_count, std::uint64_t seed);

}  // namespace uq
