#include "malab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "malab/kernels.hpp"
#include "malab/ops.hpp"

namespace malab {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void require_width(const Tensor<T>& x, const Tensor<T>& param, const char* op) {
  if (x.rank() == 0 || param.numel() != x.cols()) {
    throw DimensionError(std::string(op) + ": parameter of length " +
                         std::to_string(param.numel()) + " for input " + shape_to_string(x.shape()));
  }
}

}  // namespace

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::layer_norm: return "layer_norm";
    case NormKind::rms_norm: return "rms_norm";
    case NormKind::dyt: return "dyt";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view name) {
  if (name == "layer_norm" || name == "layernorm") return NormKind::layer_norm;
  if (name == "rms_norm" || name == "rmsnorm") return NormKind::rms_norm;
  if (name == "dyt") return NormKind::dyt;
  throw ConfigError("unknown norm kind '" + std::string(name) + "'");
}

template <typename T>
NormParams<T> make_norm(NormKind kind, std::size_t width, double epsilon, double alpha) {
  NormParams<T> p;
  p.kind = kind;
  p.epsilon = epsilon;
  p.gamma = Tensor<T>({width}, T(1), true);
  if (kind != NormKind::rms_norm) p.beta = Tensor<T>({width}, T(0), true);
  if (kind == NormKind::dyt) {
    if (!(alpha > 0)) throw ConfigError("DyT alpha must be positive");
    p.alpha = Tensor<T>::scalar(static_cast<T>(alpha), true);
  } else if (!(epsilon > 0)) {
    throw ConfigError("normalization epsilon must be positive");
  }
  return p;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double epsilon) {
  require_width(x, gamma, "layer_norm");
  require_width(x, beta, "layer_norm");
  const std::size_t rows = x.rows(), w = x.cols();
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* xs = x.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs + r * w;
    T mu = 0;
    for (std::size_t j = 0; j < w; ++j) mu += row[j];
    mu /= static_cast<T>(w);
    T var = 0;
    for (std::size_t j = 0; j < w; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(w);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(epsilon));
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < w; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * w + j] = h;
      out[r * w + j] = h * g[j] + b[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {xn, gn, bn}, [xn, gn, bn, xhat, rstd, rows, w](NodeT<T>& o) {
        const T* dy = o.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
#pragma omp parallel for schedule(static)
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < w; ++j) {
              const T d = dy[r * w + j] * gn->data[j];
              mean_d += d;
              mean_dx += d * (*xhat)[r * w + j];
            }
            mean_d /= static_cast<T>(w);
            mean_dx /= static_cast<T>(w);
            for (std::size_t j = 0; j < w; ++j) {
              const T d = dy[r * w + j] * gn->data[j];
              xn->grad[r * w + j] += (*rstd)[r] * (d - mean_d - (*xhat)[r * w + j] * mean_dx);
            }
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gn->grad[j] += dy[r * w + j] * (*xhat)[r * w + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) bn->grad[j] += dy[r * w + j];
        }
      });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, double epsilon) {
  require_width(x, gamma, "rms_norm");
  const std::size_t rows = x.rows(), w = x.cols();
  std::vector<T> out(x.numel());
  auto inv = std::make_shared<std::vector<T>>(rows);
  const T* xs = x.data().data();
  const T* g = gamma.data().data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs + r * w;
    T ms = 0;
    for (std::size_t j = 0; j < w; ++j) ms += row[j] * row[j];
    ms /= static_cast<T>(w);
    const T s = T(1) / std::sqrt(ms + static_cast<T>(epsilon));
    (*inv)[r] = s;
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = row[j] * s * g[j];
  }
  auto xn = x.node(), gn = gamma.node();
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {xn, gn}, [xn, gn, inv, rows, w](NodeT<T>& o) {
        const T* dy = o.grad.data();
        const T* xs = xn->data.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
#pragma omp parallel for schedule(static)
          for (std::size_t r = 0; r < rows; ++r) {
            const T s = (*inv)[r];
            T dot = 0;
            for (std::size_t j = 0; j < w; ++j) dot += dy[r * w + j] * gn->data[j] * xs[r * w + j];
            dot /= static_cast<T>(w);
            for (std::size_t j = 0; j < w; ++j) {
              xn->grad[r * w + j] +=
                  s * (dy[r * w + j] * gn->data[j] - xs[r * w + j] * s * s * dot);
            }
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j)
              gn->grad[j] += dy[r * w + j] * xs[r * w + j] * (*inv)[r];
        }
      });
}

template <typename T>
Tensor<T> dyt(const Tensor<T>& x, const Tensor<T>& alpha, const Tensor<T>& gamma,
              const Tensor<T>& beta) {
  require_width(x, gamma, "dyt");
  require_width(x, beta, "dyt");
  if (alpha.numel() != 1) throw DimensionError("dyt: alpha must be a single element");
  const std::size_t rows = x.rows(), w = x.cols();
  const T a = alpha[0];
  auto th = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  const T* xs = x.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      const T t = std::tanh(a * xs[r * w + j]);
      (*th)[r * w + j] = t;
      out[r * w + j] = g[j] * t + b[j];
    }
  }
  auto xn = x.node(), an = alpha.node(), gn = gamma.node(), bn = beta.node();
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {xn, an, gn, bn}, [xn, an, gn, bn, th, rows, w](NodeT<T>& o) {
        const T* dy = o.grad.data();
        const T a = an->data[0];
        if (xn->requires_grad) {
          xn->ensure_grad();
#pragma omp parallel for schedule(static)
          for (std::size_t i = 0; i < rows * w; ++i) {
            const T t = (*th)[i];
            xn->grad[i] += dy[i] * gn->data[i % w] * a * (T(1) - t * t);
          }
        }
        if (an->requires_grad) {
          an->ensure_grad();
          T acc = 0;
          for (std::size_t i = 0; i < rows * w; ++i) {
            const T t = (*th)[i];
            acc += dy[i] * gn->data[i % w] * xn->data[i] * (T(1) - t * t);
          }
          an->grad[0] += acc;
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t i = 0; i < rows * w; ++i) gn->grad[i % w] += dy[i] * (*th)[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < rows * w; ++i) bn->grad[i % w] += dy[i];
        }
      });
}

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, const NormParams<T>& p) {
  switch (p.kind) {
    case NormKind::layer_norm: return layer_norm(x, p.gamma, p.beta, p.epsilon);
    case NormKind::rms_norm: return rms_norm(x, p.gamma, p.epsilon);
    case NormKind::dyt: return dyt(x, p.alpha, p.gamma, p.beta);
  }
  throw ConfigError("unknown norm kind");
}

template <typename T>
Tensor<T> gelu_mlp(const Tensor<T>& x, const MlpParams<T>& w) {
  return ops::matmul(ops::gelu(ops::matmul(x, w.w_up)), w.w_down);
}

template <typename T>
Tensor<T> swiglu_mlp(const Tensor<T>& x, const MlpParams<T>& w) {
  auto gate = ops::silu(ops::matmul(x, w.w_gate));
  auto up = ops::matmul(x, w.w_up);
  return ops::matmul(ops::mul(gate, up), w.w_down);
}

template <typename T>
Tensor<T> apply_mlp(const Tensor<T>& x, const MlpParams<T>& w) {
  return w.kind == MlpKind::gelu ? gelu_mlp(x, w) : swiglu_mlp(x, w);
}

std::vector<double> sequence_positions(std::size_t rows, std::size_t seq_len) {
  std::vector<double> pos(rows);
  for (std::size_t r = 0; r < rows; ++r) pos[r] = static_cast<double>(r % seq_len);
  return pos;
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const double> positions,
                     std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rope_apply: head_dim must be even, got " + std::to_string(head_dim));
  }
  const std::size_t rows = x.rows(), w = x.cols();
  if (w % head_dim != 0) throw DimensionError("rope_apply: width not a multiple of head_dim");
  if (positions.size() != rows) throw DimensionError("rope_apply: one position per row required");
  const std::size_t half = head_dim / 2;
  // cos/sin table per (row, pair)
  auto table = std::make_shared<std::vector<T>>(rows * head_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
      const double ang = positions[r] * freq;
      (*table)[r * head_dim + 2 * j] = static_cast<T>(std::cos(ang));
      (*table)[r * head_dim + 2 * j + 1] = static_cast<T>(std::sin(ang));
    }
  }
  auto rotate = [rows, w, head_dim, half](const T* src, T* dst, const std::vector<T>& cs,
                                          T sign, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t h0 = 0; h0 < w; h0 += head_dim) {
        for (std::size_t j = 0; j < half; ++j) {
          const T c = cs[r * head_dim + 2 * j];
          const T s = sign * cs[r * head_dim + 2 * j + 1];
          const std::size_t i = r * w + h0 + 2 * j;
          const T a = src[i], b = src[i + 1];
          const T y0 = a * c - b * s;
          const T y1 = a * s + b * c;
          if (accumulate) {
            dst[i] += y0;
            dst[i + 1] += y1;
          } else {
            dst[i] = y0;
            dst[i + 1] = y1;
          }
        }
      }
    }
  };
  std::vector<T> out(x.numel());
  rotate(x.data().data(), out.data(), *table, T(1), false);
  auto xn = x.node();
  return Tensor<T>::make_result(x.shape(), std::move(out), {xn},
                                [xn, table, rotate](NodeT<T>& o) {
                                  xn->ensure_grad();
                                  rotate(o.grad.data(), xn->grad.data(), *table, T(-1), true);
                                });
}

namespace {

// Copies head h of batch b from a (B*T) x width tensor into a T x hd block.
template <typename T>
void gather_head(const T* src, T* dst, std::size_t b, std::size_t h, const AttentionGeometry& g) {
  const std::size_t width = g.n_heads * g.head_dim;
  for (std::size_t t = 0; t < g.seq_len; ++t) {
    std::copy_n(src + (b * g.seq_len + t) * width + h * g.head_dim, g.head_dim,
                dst + t * g.head_dim);
  }
}

template <typename T>
void scatter_add_head(const T* src, T* dst, std::size_t b, std::size_t h,
                      const AttentionGeometry& g) {
  const std::size_t width = g.n_heads * g.head_dim;
  for (std::size_t t = 0; t < g.seq_len; ++t) {
    T* d = dst + (b * g.seq_len + t) * width + h * g.head_dim;
    const T* s = src + t * g.head_dim;
    for (std::size_t j = 0; j < g.head_dim; ++j) d[j] += s[j];
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const AttentionGeometry& g, const KVBiasParams<T>* bias,
                         const AttentionOptions& options) {
  if (g.seq_len == 0 || g.batch == 0) throw DomainError("attention over an empty sequence");
  const std::size_t width = g.n_heads * g.head_dim;
  const Shape expect{g.batch * g.seq_len, width};
  for (const Tensor<T>* t : {&q, &k, &v}) {
    if (t->shape() != expect) {
      throw DimensionError("attention: expected " + shape_to_string(expect) + ", got " +
                           shape_to_string(t->shape()));
    }
  }
  if (bias) {
    const Shape bshape{g.n_heads, g.head_dim};
    if (bias->k_prime.shape() != bshape || bias->v_prime.shape() != bshape) {
      throw DimensionError("attention: kv bias must be " + shape_to_string(bshape));
    }
  }
  const std::size_t T_ = g.seq_len, hd = g.head_dim;
  const std::size_t slots = T_ + (bias ? 1 : 0);
  const std::size_t pairs = g.batch * g.n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  // probs: per (b, h) a T x slots matrix, masked entries 0.
  auto probs = std::make_shared<std::vector<T>>(pairs * T_ * slots, T(0));
  std::vector<T> out(g.batch * T_ * width, T(0));
  const T* kp = bias ? bias->k_prime.data().data() : nullptr;
  const T* vp = bias ? bias->v_prime.data().data() : nullptr;

  if (options.capture) {
    options.capture->heads.assign(g.n_heads, AttentionHeadCapture{});
  }

#pragma omp parallel for schedule(dynamic)
  for (std::size_t pi = 0; pi < pairs; ++pi) {
    const std::size_t b = pi / g.n_heads, h = pi % g.n_heads;
    std::vector<T> qh(T_ * hd), kh(T_ * hd), vh(T_ * hd), s(T_ * T_), oh(T_ * hd);
    gather_head(q.data().data(), qh.data(), b, h, g);
    gather_head(k.data().data(), kh.data(), b, h, g);
    gather_head(v.data().data(), vh.data(), b, h, g);
    kernels::gemm<T>(false, true, T_, T_, hd, qh.data(), kh.data(), s.data(), false);
    T* p = probs->data() + pi * T_ * slots;
    std::vector<T> raw_bias(T_, neg_inf);
    for (std::size_t i = 0; i < T_; ++i) {
      T* prow = p + i * slots;
      T mx = neg_inf;
      for (std::size_t j = 0; j <= i; ++j) {
        prow[j] = s[i * T_ + j] * scale;
        mx = std::max(mx, prow[j]);
      }
      if (bias) {
        T bl = 0;
        for (std::size_t d = 0; d < hd; ++d) bl += qh[i * hd + d] * kp[h * hd + d];
        bl *= scale;
        raw_bias[i] = bl;
        if (!options.mask_bias_slot) mx = std::max(mx, bl);
      }
      T z = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
      if (bias) {
        prow[T_] = options.mask_bias_slot ? T(0) : std::exp(raw_bias[i] - mx);
        z += prow[T_];
      }
      const T inv = T(1) / z;
      for (std::size_t j = 0; j <= i; ++j) prow[j] *= inv;
      if (bias) prow[T_] *= inv;
    }
    // O = P[:, :T] V (+ p_bias v')
    for (std::size_t i = 0; i < T_; ++i) {
      T* orow = oh.data() + i * hd;
      std::fill(orow, orow + hd, T(0));
      const T* prow = p + i * slots;
      for (std::size_t j = 0; j <= i; ++j) {
        const T pj = prow[j];
        const T* vrow = vh.data() + j * hd;
        for (std::size_t d = 0; d < hd; ++d) orow[d] += pj * vrow[d];
      }
      if (bias) {
        for (std::size_t d = 0; d < hd; ++d) orow[d] += prow[T_] * vp[h * hd + d];
      }
    }
    for (std::size_t t = 0; t < T_; ++t) {
      std::copy_n(oh.data() + t * hd, hd, out.data() + (b * T_ + t) * width + h * hd);
    }
    if (options.capture && b == 0) {
      AttentionHeadCapture& c = options.capture->heads[h];
      c.seq_len = T_;
      c.head_dim = hd;
      c.has_bias_slot = bias != nullptr;
      c.logits.assign(T_ * slots, std::numeric_limits<double>::quiet_NaN());
      c.probs.assign(p, p + T_ * slots);
      for (std::size_t i = 0; i < T_; ++i) {
        for (std::size_t j = 0; j <= i; ++j) c.logits[i * slots + j] = s[i * T_ + j] * scale;
        if (bias && !options.mask_bias_slot) c.logits[i * slots + T_] = raw_bias[i];
      }
      c.values.assign(vh.begin(), vh.end());
      if (bias) c.values.insert(c.values.end(), vp + h * hd, vp + (h + 1) * hd);
      c.output.assign(oh.begin(), oh.end());
    }
  }

  auto qn = q.node(), kn = k.node(), vn = v.node();
  std::vector<typename Tensor<T>::NodePtr> parents{qn, kn, vn};
  typename Tensor<T>::NodePtr kpn, vpn;
  if (bias) {
    kpn = bias->k_prime.node();
    vpn = bias->v_prime.node();
    parents.push_back(kpn);
    parents.push_back(vpn);
  }
  return Tensor<T>::make_result(
      expect, std::move(out), std::move(parents),
      [qn, kn, vn, kpn, vpn, probs, g, slots, scale](NodeT<T>& o) {
        const std::size_t T_ = g.seq_len, hd = g.head_dim, pairs = g.batch * g.n_heads;
        const bool has_bias = kpn != nullptr;
        for (const auto& n : {qn, kn, vn}) n->ensure_grad();
        // Per-pair bias gradients, reduced serially afterwards.
        std::vector<T> dkp(has_bias ? pairs * hd : 0, T(0));
        std::vector<T> dvp(has_bias ? pairs * hd : 0, T(0));
#pragma omp parallel for schedule(dynamic)
        for (std::size_t pi = 0; pi < pairs; ++pi) {
          const std::size_t b = pi / g.n_heads, h = pi % g.n_heads;
          std::vector<T> qh(T_ * hd), kh(T_ * hd), vh(T_ * hd), doh(T_ * hd);
          std::vector<T> dp(T_ * T_), ds(T_ * T_, T(0)), dsb(T_, T(0));
          std::vector<T> dq(T_ * hd), dk(T_ * hd), dv(T_ * hd);
          gather_head(qn->data.data(), qh.data(), b, h, g);
          gather_head(kn->data.data(), kh.data(), b, h, g);
          gather_head(vn->data.data(), vh.data(), b, h, g);
          gather_head(o.grad.data(), doh.data(), b, h, g);
          const T* p = probs->data() + pi * T_ * slots;
          const T* kp = has_bias ? kpn->data.data() + h * hd : nullptr;
          const T* vp = has_bias ? vpn->data.data() + h * hd : nullptr;
          // dP = dO V^T
          kernels::gemm<T>(false, true, T_, T_, hd, doh.data(), vh.data(), dp.data(), false);
          for (std::size_t i = 0; i < T_; ++i) {
            const T* prow = p + i * slots;
            T dpb = 0;
            if (has_bias) {
              for (std::size_t d = 0; d < hd; ++d) dpb += doh[i * hd + d] * vp[d];
            }
            T rowdot = 0;
            for (std::size_t j = 0; j <= i; ++j) rowdot += prow[j] * dp[i * T_ + j];
            if (has_bias) rowdot += prow[T_] * dpb;
            for (std::size_t j = 0; j <= i; ++j) {
              ds[i * T_ + j] = prow[j] * (dp[i * T_ + j] - rowdot) * scale;
            }
            if (has_bias) dsb[i] = prow[T_] * (dpb - rowdot) * scale;
          }
          // dQ = dS K (+ dsb k'), dK = dS^T Q, dV = P^T dO
          kernels::gemm<T>(false, false, T_, hd, T_, ds.data(), kh.data(), dq.data(), false);
          kernels::gemm<T>(true, false, T_, hd, T_, ds.data(), qh.data(), dk.data(), false);
          std::vector<T> pt(T_ * T_);
          for (std::size_t i = 0; i < T_; ++i)
            for (std::size_t j = 0; j < T_; ++j) pt[i * T_ + j] = j <= i ? p[i * slots + j] : T(0);
          kernels::gemm<T>(true, false, T_, hd, T_, pt.data(), doh.data(), dv.data(), false);
          if (has_bias) {
            T* dkp_h = dkp.data() + pi * hd;
            T* dvp_h = dvp.data() + pi * hd;
            for (std::size_t i = 0; i < T_; ++i) {
              const T pb = p[i * slots + T_];
              for (std::size_t d = 0; d < hd; ++d) {
                dq[i * hd + d] += dsb[i] * kp[d];
                dkp_h[d] += dsb[i] * qh[i * hd + d];
                dvp_h[d] += pb * doh[i * hd + d];
              }
            }
          }
          scatter_add_head(dq.data(), qn->grad.data(), b, h, g);
          scatter_add_head(dk.data(), kn->grad.data(), b, h, g);
          scatter_add_head(dv.data(), vn->grad.data(), b, h, g);
        }
        if (has_bias) {
          for (const auto& [node, part] : {std::pair{kpn, &dkp}, std::pair{vpn, &dvp}}) {
            if (!node->requires_grad) continue;
            node->ensure_grad();
            for (std::size_t pi = 0; pi < pairs; ++pi) {
              const std::size_t h = pi % g.n_heads;
              for (std::size_t d = 0; d < hd; ++d) node->grad[h * hd + d] += (*part)[pi * hd + d];
            }
          }
        }
      });
}

namespace {

template <typename T>
Tensor<T> attention_block(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                          const AttentionParams<T>& params, std::size_t seq_len,
                          const KVBiasParams<T>* bias, const AttentionOptions& options) {
  if (seq_len == 0) throw DomainError("attention over an empty sequence");
  if (q_in.rows() % seq_len != 0) {
    throw DimensionError("attention: rows " + std::to_string(q_in.rows()) +
                         " not a multiple of seq_len " + std::to_string(seq_len));
  }
  AttentionGeometry g{q_in.rows() / seq_len, seq_len, params.n_heads, params.head_dim};
  auto q = ops::matmul(q_in, params.wq);
  auto k = ops::matmul(k_in, params.wk);
  auto v = ops::matmul(v_in, params.wv);
  if (options.rope) {
    const auto pos = sequence_positions(q.rows(), seq_len);
    q = rope_apply(q, pos, params.head_dim, options.rope_base);
    k = rope_apply(k, pos, params.head_dim, options.rope_base);
  }
  auto ctx = attention_core(q, k, v, g, bias, options);
  return ops::matmul(ctx, params.wo);
}

}  // namespace

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                           const AttentionParams<T>& params, std::size_t seq_len,
                           const AttentionOptions& options) {
  return attention_block(q_in, k_in, v_in, params, seq_len, static_cast<const KVBiasParams<T>*>(nullptr), options);
}

template <typename T>
Tensor<T> kv_bias_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                            const AttentionParams<T>& params, std::size_t seq_len,
                            const AttentionOptions& options) {
  if (!params.kv_bias) throw ConfigError("kv_bias_attention: parameters carry no kv bias");
  return attention_block(q_in, k_in, v_in, params, seq_len, &*params.kv_bias, options);
}

#define MALAB_INSTANTIATE_LAYERS(T)                                                          \
  template NormParams<T> make_norm<T>(NormKind, std::size_t, double, double);                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, double);                   \
  template Tensor<T> dyt(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> apply_norm(const Tensor<T>&, const NormParams<T>&);                     \
  template Tensor<T> gelu_mlp(const Tensor<T>&, const MlpParams<T>&);                        \
  template Tensor<T> swiglu_mlp(const Tensor<T>&, const MlpParams<T>&);                      \
  template Tensor<T> apply_mlp(const Tensor<T>&, const MlpParams<T>&);                       \
  template Tensor<T> rope_apply(const Tensor<T>&, std::span<const double>, std::size_t, double); \
  template Tensor<T> attention_core(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    const AttentionGeometry&, const KVBiasParams<T>*,        \
                                    const AttentionOptions&);                                \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      const AttentionParams<T>&, std::size_t,                \
                                      const AttentionOptions&);                              \
  template Tensor<T> kv_bias_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                       const AttentionParams<T>&, std::size_t,               \
                                       const AttentionOptions&);

MALAB_INSTANTIATE_LAYERS(float)
MALAB_INSTANTIATE_LAYERS(double)

#undef MALAB_INSTANTIATE_LAYERS

}  // namespace malab
