#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "malab/tensor.hpp"

// Differentiable tensor primitives. Each function records a backward rule
// when any input requires a gradient.

namespace malab::ops {

/// Rank-2 product a (m x k) * b (k x n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Rank-2 product a (m x k) * b^T where b is n x k (tied unembedding).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x * c for a constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);

/// x * s where s is a single-element tensor that may carry a gradient.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Softmax over the last dimension with max subtraction. NaN input throws
/// NumericError.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

/// Row lookup: out[i] = table[ids[i]]. Backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

/// Mean next-token cross entropy over rows whose target is not `kIgnore`.
inline constexpr std::int32_t kIgnore = -1;
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

/// Throws NumericError naming `what` if any value is NaN or infinite.
template <typename T>
void check_finite(std::span<const T> values, const char* what);

}  // namespace malab::ops
