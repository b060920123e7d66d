#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "densepillars/tensor.hpp"

namespace dpp {

template <typename T>
struct Conv2dParams {
  Var<T> weight;                // [C_out, C_in, k, k]
  std::optional<Var<T>> bias;   // [C_out]
  int stride = 1;
  int padding = 0;
};

enum class NormMode { kTrain, kEval };

template <typename T>
struct BatchNormParams {
  Var<T> gamma;  // [C]
  Var<T> beta;   // [C]
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-3);
  T momentum = T(0.1);
  NormMode mode = NormMode::kTrain;

  static BatchNormParams create(std::int64_t channels);
  std::int64_t channels() const { return gamma.numel(); }
};

/// Output extent of a convolution along one axis; throws if it is < 1.
std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride, int padding);

/// Cross-correlation over an NCHW input.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Conv2dParams<T>& p);

/// Transposed convolution with kernel == stride and no padding: each input
/// pixel paints a disjoint stride x stride block. weight is [C_in, C_out, k, k].
template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& weight, int stride);

/// Per-channel normalisation of [N, C, H, W] or [M, C] input. In train mode
/// the running statistics inside `p` are updated.
template <typename T>
Var<T> batch_norm(const Var<T>& input, BatchNormParams<T>& p);

template <typename T>
Var<T> relu(const Var<T>& input);

template <typename T>
Var<T> avg_pool2x2(const Var<T>& input);

template <typename T>
Var<T> channel_concat(const std::vector<Var<T>>& inputs);

/// input [M, D_in] x weight [D_in, D_out] (+ bias [D_out]).
template <typename T>
Var<T> linear_map(const Var<T>& input, const Var<T>& weight,
                  const std::type_identity_t<std::optional<Var<T>>>& bias = std::nullopt);

/// Max over `axis`. `mask` (optional) has the shape of the input with the
/// trailing dimensions after `axis` removed; false entries are skipped. A
/// group with no valid entry reduces to 0. Ties go to the lowest index.
template <typename T>
Var<T> max_over_axis(const Var<T>& input, std::size_t axis, const std::vector<bool>* mask = nullptr);

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape);

/// Scalar sum(input * weights); used to project non-scalar outputs.
template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights);

/// Row-major C = alpha * op(A) * op(B) + beta * C with explicit leading dims.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc);

}  // namespace dpp
