#include "malab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "malab/kernels.hpp"

namespace malab::ops {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

template <typename T>
void require_rank2(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_to_string(a.shape()));
  }
}

template <typename T>
void check_no_nan(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (std::isnan(v)) throw NumericError(std::string(what) + ": NaN input");
  }
}

// Elementwise unary op given f(x) and f'(x) evaluated from x.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* xs = x.data().data();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xs[i]);
  auto xn = x.node();
  return Tensor<T>::make_result(x.shape(), std::move(out), {xn},
                                [xn, df](NodeT<T>& o) {
                                  xn->ensure_grad();
                                  const std::size_t m = o.grad.size();
                                  T* g = xn->grad.data();
                                  const T* d = xn->data.data();
                                  const T* og = o.grad.data();
#pragma omp parallel for simd schedule(static)
                                  for (std::size_t i = 0; i < m; ++i) g[i] += og[i] * df(d[i]);
                                });
}

}  // namespace

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result({m, n}, std::move(out), {an, bn},
                                [an, bn, m, n, k](NodeT<T>& o) {
                                  if (an->requires_grad) {
                                    an->ensure_grad();
                                    // dA = dC * B^T
                                    kernels::gemm<T>(false, true, m, k, n, o.grad.data(),
                                                     bn->data.data(), an->grad.data(), true);
                                  }
                                  if (bn->requires_grad) {
                                    bn->ensure_grad();
                                    // dB = A^T * dC
                                    kernels::gemm<T>(true, false, k, n, m, an->data.data(),
                                                     o.grad.data(), bn->grad.data(), true);
                                  }
                                });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  kernels::gemm<T>(false, true, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result({m, n}, std::move(out), {an, bn},
                                [an, bn, m, n, k](NodeT<T>& o) {
                                  if (an->requires_grad) {
                                    an->ensure_grad();
                                    kernels::gemm<T>(false, false, m, k, n, o.grad.data(),
                                                     bn->data.data(), an->grad.data(), true);
                                  }
                                  if (bn->requires_grad) {
                                    bn->ensure_grad();
                                    // dB (n x k) = dC^T * A
                                    kernels::gemm<T>(true, false, n, k, m, o.grad.data(),
                                                     an->data.data(), bn->grad.data(), true);
                                  }
                                });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const T* x = a.data().data();
  const T* y = b.data().data();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {an, bn}, [an, bn](NodeT<T>& o) {
    for (const auto& p : {an, bn}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      kernels::axpy<T>(o.grad.size(), T(1), o.grad.data(), p->grad.data());
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const T* x = a.data().data();
  const T* y = b.data().data();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {an, bn}, [an, bn](NodeT<T>& o) {
    const std::size_t m = o.grad.size();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) an->grad[i] += o.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) bn->grad[i] += o.grad[i] * an->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return unary(x, [c](T v) { return v * c; }, [c](T) { return c; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: scale must have one element, got " +
                         shape_to_string(s.shape()));
  }
  const T c = s[0];
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* xs = x.data().data();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) out[i] = xs[i] * c;
  auto xn = x.node();
  auto sn = s.node();
  return Tensor<T>::make_result(x.shape(), std::move(out), {xn, sn}, [xn, sn](NodeT<T>& o) {
    const std::size_t m = o.grad.size();
    if (xn->requires_grad) {
      xn->ensure_grad();
      kernels::axpy<T>(m, sn->data[0], o.grad.data(), xn->grad.data());
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      T acc = 0;
      for (std::size_t i = 0; i < m; ++i) acc += o.grad[i] * xn->data[i];
      sn->grad[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); },
      [](T v) {
        const T t = std::tanh(v);
        return T(1) - t * t;
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  return unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v) {
        const T t = std::tanh(kC * (v + kA * v * v * v));
        return T(0.5) * (T(1) + t) +
               T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto xn = x.node();
  return Tensor<T>::make_result({1}, {acc}, {xn}, [xn](NodeT<T>& o) {
    xn->ensure_grad();
    const T g = o.grad[0];
    for (T& v : xn->grad) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DomainError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0 || x.cols() == 0) throw DomainError("softmax over empty last dimension");
  check_no_nan(x.data(), "softmax_lastdim");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<T> out(x.data().begin(), x.data().end());
  kernels::softmax_rows<T>(rows, cols, out.data());
  auto xn = x.node();
  return Tensor<T>::make_result(x.shape(), std::move(out), {xn}, [xn, rows, cols](NodeT<T>& o) {
    xn->ensure_grad();
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.data.data() + r * cols;
      const T* gy = o.grad.data() + r * cols;
      T dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
      T* gx = xn->grad.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InputError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  const std::size_t n = ids.size();
  std::vector<T> out(n * width);
  const T* src = table.data().data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(src + static_cast<std::size_t>(ids[i]) * width, width, out.data() + i * width);
  }
  auto tn = table.node();
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return Tensor<T>::make_result({n, width}, std::move(out), {tn},
                                [tn, idv = std::move(idv), width](NodeT<T>& o) {
                                  tn->ensure_grad();
                                  // Serial: repeated ids scatter into the same row.
                                  for (std::size_t i = 0; i < idv.size(); ++i) {
                                    T* dst = tn->grad.data() + static_cast<std::size_t>(idv[i]) * width;
                                    const T* g = o.grad.data() + i * width;
                                    for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
                                  }
                                });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  require_rank2(logits, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  std::size_t count = 0;
  for (std::int32_t t : targets) {
    if (t == kIgnore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw InputError("cross_entropy: target " + std::to_string(t) + " outside vocabulary");
    }
    ++count;
  }
  if (count == 0) throw DomainError("cross_entropy: every target is masked");
  check_no_nan(logits.data(), "cross_entropy");

  // probs keeps softmax rows for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(logits.data().begin(), logits.data().end());
  kernels::softmax_rows<T>(rows, vocab, probs->data());
  double nll = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == kIgnore) continue;
    const T* row = logits.data().data() + r * vocab;
    T mx = *std::max_element(row, row + vocab);
    double z = 0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    nll += std::log(z) - static_cast<double>(row[targets[r]] - mx);
  }
  const T loss = static_cast<T>(nll / static_cast<double>(count));
  auto ln = logits.node();
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return Tensor<T>::make_result(
      {1}, {loss}, {ln}, [ln, probs, tv = std::move(tv), rows, vocab, count](NodeT<T>& o) {
        ln->ensure_grad();
        const T g = o.grad[0] / static_cast<T>(count);
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < rows; ++r) {
          if (tv[r] == kIgnore) continue;
          const T* p = probs->data() + r * vocab;
          T* dst = ln->grad.data() + r * vocab;
          for (std::size_t j = 0; j < vocab; ++j) dst[j] += g * p[j];
          dst[tv[r]] -= g;
        }
      });
}

#define MALAB_INSTANTIATE_OPS(T)                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                  \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> tanh(const Tensor<T>&);                                      \
  template Tensor<T> gelu(const Tensor<T>&);                                      \
  template Tensor<T> silu(const Tensor<T>&);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                       \
  template Tensor<T> mean(const Tensor<T>&);                                      \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                           \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);  \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>); \
  template void check_finite(std::span<const T>, const char*);

MALAB_INSTANTIATE_OPS(float)
MALAB_INSTANTIATE_OPS(double)

#undef MALAB_INSTANTIATE_OPS

}  // namespace malab::ops
