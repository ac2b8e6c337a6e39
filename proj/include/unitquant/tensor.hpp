#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "unitquant/common.hpp"

namespace uq {

template <typename S>
concept Scalar = std::floating_point<S>;

inline std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <Scalar S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <Scalar S>
using VecX = Eigen::Vector<S, Eigen::Dynamic>;
template <Scalar S>
using MatMap = Eigen::Map<MatX<S>>;
template <Scalar S>
using CMatMap = Eigen::Map<const MatX<S>>;
template <Scalar S>
using VecMap = Eigen::Map<VecX<S>>;
template <Scalar S>
using CVecMap = Eigen::Map<const VecX<S>>;

/// Dense n-dimensional array, row-major, NCHW for image tensors.
/// `grad` is empty until a backward pass allocates it.
template <Scalar S>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<S> data;
  std::vector<S> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape_)
      : shape(std::move(shape_)), data(static_cast<std::size_t>(numel_of(shape)), S(0)) {
    for (auto d : shape)
      if (d <= 0) throw DimensionError("tensor shape must be positive, got " + shape_str(shape));
  }
  Tensor(std::vector<std::int64_t> shape_, std::vector<S> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 4-d NCHW access
  S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  S at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  // 2-d access
  S& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  S at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
  void zero_grad() { grad.assign(data.size(), S(0)); }

  /// View data as a rows x cols row-major matrix.
  MatMap<S> mat(std::int64_t rows, std::int64_t cols) {
    return MatMap<S>(data.data(), rows, cols);
  }
  CMatMap<S> mat(std::int64_t rows, std::int64_t cols) const {
    return CMatMap<S>(data.data(), rows, cols);
  }
  VecMap<S> vec() { return VecMap<S>(data.data(), numel()); }
  CVecMap<S> vec() const { return CVecMap<S>(data.data(), numel()); }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor zeros(std::vector<std::int64_t> shape_) { return Tensor(std::move(shape_)); }
  static Tensor full(std::vector<std::int64_t> shape_, S value) {
    Tensor t(std::move(shape_));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  template <Scalar T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Input batch: images in NCHW plus integer class labels.
template <Scalar S>
struct Batch {
  Tensor<S> inputs;
  std::vector<int> labels;
  Tensor<S> targets;  // used instead of labels for squared-error losses

  std::int64_t size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }

  void check_labels(int class_count) const {
    if (size() < 1) throw DataError("batch must contain at least one sample");
    for (int y : labels)
      if (y < 0 || y >= class_count)
        throw DataError("label " + std::to_string(y) + " out of range for " +
                        std::to_string(class_count) + " classes");
  }
};

/// Elementwise SGD update p <- p - lr * g.
template <Scalar S>
void sgd_step(std::vector<S>& params, const std::vector<S>& grads, S lr) {
  if (lr <= S(0)) throw ParameterError("sgd_step: learning rate must be positive");
  if (params.size() != grads.size())
    throw DimensionError("sgd_step: parameter count " + std::to_string(params.size()) +
                         " != gradient count " + std::to_string(grads.size()));
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

template <Scalar S>
void sgd_step(Tensor<S>& param, const std::vector<S>& grads, S lr) {
  sgd_step(param.data, grads, lr);
}

}  // namespace uq
