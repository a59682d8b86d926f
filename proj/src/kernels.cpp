#include "malab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace malab::kernels {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 64;

// C[i0..i0+R, j0..j0+W] (+)= A[i0.., :] * B[:, j0..]; A is m x k, B is k x n.
template <typename T, std::size_t R, std::size_t W>
inline void micro_tile(std::size_t n, std::size_t k, const T* a, const T* b,
                       T* c, std::size_t i0, std::size_t j0, bool accumulate) {
  T acc[R][W];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < W; ++j) {
      acc[r][j] = accumulate ? c[(i0 + r) * n + j0 + j] : T(0);
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[(i0 + r) * k + p];
#pragma omp simd
      for (std::size_t j = 0; j < W; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < W; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
  }
}

// Generic edge tile with runtime extents.
template <typename T>
inline void edge_tile(std::size_t n, std::size_t k, const T* a, const T* b,
                      T* c, std::size_t i0, std::size_t rows, std::size_t j0,
                      std::size_t cols, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + (i0 + r) * n + j0;
    if (!accumulate) std::fill(crow, crow + cols, T(0));
    const T* arow = a + (i0 + r) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n + j0;
#pragma omp simd
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  const std::size_t row_blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (std::size_t rb = 0; rb < row_blocks; ++rb) {
    const std::size_t i0 = rb * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    std::size_t j0 = 0;
    if (rows == kRowBlock) {
      for (; j0 + kColBlock <= n; j0 += kColBlock) {
        micro_tile<T, kRowBlock, kColBlock>(n, k, a, b, c, i0, j0, accumulate);
      }
      for (; j0 + 16 <= n; j0 += 16) {
        micro_tile<T, kRowBlock, 16>(n, k, a, b, c, i0, j0, accumulate);
      }
    }
    if (j0 < n) edge_tile(n, k, a, b, c, i0, rows, j0, n - j0, accumulate);
  }
}

}  // namespace

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 32;
#pragma omp parallel for schedule(static)
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t ie = std::min(rows, i0 + kTile);
      const std::size_t je = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < ie; ++i) {
        for (std::size_t j = j0; j < je; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  std::vector<T> at;
  std::vector<T> bt;
  if (trans_a) {
    at.resize(m * k);
    transpose(k, m, a, at.data());
    a = at.data();
  }
  if (trans_b) {
    bt.resize(k * n);
    transpose(n, k, b, bt.data());
    b = bt.data();
  }
  gemm_nn(m, n, k, a, b, c, accumulate);
}

template <typename T>
void softmax_rows(std::size_t m, std::size_t n, T* x) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    T* row = x + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        sum += av * bv;
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void softmax_rows(std::size_t m, std::size_t n, T* x) {
  for (std::size_t i = 0; i < m; ++i) {
    T* row = x + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

}  // namespace reference

#define MALAB_INSTANTIATE_KERNELS(T)                                          \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t,    \
                        const T*, const T*, T*, bool);                        \
  template void softmax_rows<T>(std::size_t, std::size_t, T*);                \
  template void axpy<T>(std::size_t, T, const T*, T*);                        \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);         \
  template void reference::gemm<T>(bool, bool, std::size_t, std::size_t,      \
                                   std::size_t, const T*, const T*, T*, bool); \
  template void reference::softmax_rows<T>(std::size_t, std::size_t, T*);     \
  template void reference::axpy<T>(std::size_t, T, const T*, T*);             \
  template void reference::transpose<T>(std::size_t, std::size_t, const T*, T*);

MALAB_INSTANTIATE_KERNELS(float)
MALAB_INSTANTIATE_KERNELS(double)

#undef MALAB_INSTANTIATE_KERNELS

}  // namespace malab::kernels
