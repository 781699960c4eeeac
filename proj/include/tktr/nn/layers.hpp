#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tktr/conv_spec.hpp"
#include "tktr/nn/parallel.hpp"
#include "tktr/nn/tensor.hpp"

namespace tktr::nn {

/// Trainable tensor with its gradient and SGD momentum buffer.
template <class T>
struct Param {
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> velocity;

  Param() = default;
  explicit Param(std::vector<T> v) : value(std::move(v)), grad(value.size(), T(0)), velocity(value.size(), T(0)) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Execution context for a forward or backward pass.
struct Exec {
  WorkerPool* pool = nullptr;  // null runs inline
  bool training = false;
};

/// Upper bound on samples per conv task.
inline constexpr std::size_t kConvChunk = 16;

/// Samples per conv task for a patch matrix of `patch_rows` x `positions` per
/// sample: as many as keep the patch buffer near 4 MB, between 1 and
/// kConvChunk. It depends on the layer shape only, so reductions never depend
/// on the worker count.
inline std::size_t conv_chunk(std::size_t patch_rows, std::size_t positions) {
  constexpr std::size_t kBudget = std::size_t(1) << 20;  // floats
  const std::size_t per_sample = std::max<std::size_t>(1, patch_rows * positions);
  return std::clamp<std::size_t>(kBudget / per_sample, 1, kConvChunk);
}

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  explicit Conv2d(const ConvSpec& spec);

  const ConvSpec& spec() const { return spec_; }
  Param<T> weight;  // c_out x c_in x kh x kw
  Param<T> bias;    // c_out, empty without bias

  FeatureShape output_shape(const FeatureShape& in) const;
  Tensor<T> forward(const Tensor<T>& x, const Exec& ex);
  /// Writes parameter gradients; returns the input gradient unless `need_input_grad` is false.
  Tensor<T> backward(const Tensor<T>& grad_out, const Exec& ex, bool need_input_grad = true);

  std::uint64_t macs_per_sample(const FeatureShape& in) const;

 private:
  bool pointwise() const { return spec_.kh == 1 && spec_.kw == 1 && spec_.stride == 1 && spec_.padding == 0; }

  ConvSpec spec_;
  Tensor<T> input_;
};

template <class T>
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  std::size_t channels() const { return gamma.size(); }
  Param<T> gamma;
  Param<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;

  FeatureShape output_shape(const FeatureShape& in) const;
  Tensor<T> forward(const Tensor<T>& x, const Exec& ex);
  Tensor<T> backward(const Tensor<T>& grad_out, const Exec& ex);

 private:
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

template <class T>
class Relu {
 public:
  FeatureShape output_shape(const FeatureShape& in) const { return in; }
  Tensor<T> forward(const Tensor<T>& x, const Exec& ex);
  Tensor<T> backward(const Tensor<T>& grad_out, const Exec& ex);

 private:
  std::vector<std::uint8_t> active_;
};

enum class PoolMode : std::uint8_t { Max, Average };

/// 2x2 window, stride 2, no padding.
template <class T>
class Pool2 {
 public:
  Pool2() = default;
  explicit Pool2(PoolMode mode) : mode_(mode) {}

  PoolMode mode() const { return mode_; }
  FeatureShape output_shape(const FeatureShape& in) const;
  Tensor<T> forward(const Tensor<T>& x, const Exec& ex);
  Tensor<T> backward(const Tensor<T>& grad_out, const Exec& ex);

 private:
  PoolMode mode_ = PoolMode::Max;
  FeatureShape in_shape_;
  std::size_t batch_ = 0;
  std::vector<std::uint32_t> argmax_;
};

/// Fully connected layer over the flattened sample; output is n x out x 1 x 1.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features);

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Param<T> weight;  // out x in
  Param<T> bias;    // out

  FeatureShape output_shape(const FeatureShape& in) const;
  Tensor<T> forward(const Tensor<T>& x, const Exec& ex);
  Tensor<T> backward(const Tensor<T>& grad_out, const Exec& ex, bool need_input_grad = true);

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;
};

/// Mean softmax cross-entropy over the batch.
template <class T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d loss / d logits, same shape as logits
};

template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// Index of the largest logit of each sample (first on ties).
template <class T>
std::vector<std::size_t> argmax(const Tensor<T>& logits);

}  // namespace tktr::nn
