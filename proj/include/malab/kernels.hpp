#pragma once

#include <cstddef>

// Dense numeric kernels. Every kernel has an OpenMP-parallel version in
// `malab::kernels` and a serial version in `malab::kernels::reference` with
// the same signature. Work is partitioned over output rows only, so the
// parallel kernels produce the same bits regardless of thread count.

namespace malab::kernels {

/// C (m x n) = op(A) * op(B), or C += ... when `accumulate` is set.
/// op(A) is m x k; A is stored k x m when `trans_a`. Same for B (k x n).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// Row-wise numerically stable softmax of an m x n matrix, in place.
template <typename T>
void softmax_rows(std::size_t m, std::size_t n, T* x);

/// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

/// Number of threads the parallel kernels will use.
int max_threads();
void set_threads(int n);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void softmax_rows(std::size_t m, std::size_t n, T* x);

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

}  // namespace reference
}  // namespace malab::kernels
