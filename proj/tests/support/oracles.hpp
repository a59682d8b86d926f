#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "malab/init_variance.hpp"
#include "malab/intervention.hpp"
#include "malab/model.hpp"

namespace malab::testing {

/// Attention context (before the output projection) computed the slow way:
/// per head, materialize the key matrix [K; k'] and value matrix [V; v'],
/// build the masked logit row for each query and normalize it.
/// Inputs are T x (heads * hd) row-major; k_prime/v_prime are heads x hd or empty.
inline std::vector<double> concat_attention_oracle(const std::vector<double>& q,
                                                   const std::vector<double>& k,
                                                   const std::vector<double>& v, std::size_t T,
                                                   std::size_t heads, std::size_t hd,
                                                   const std::vector<double>& k_prime = {},
                                                   const std::vector<double>& v_prime = {},
                                                   bool mask_bias = false) {
  const std::size_t width = heads * hd;
  const bool bias = !k_prime.empty();
  const std::size_t rows = T + (bias ? 1 : 0);
  std::vector<double> out(T * width, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::vector<double>> K(rows, std::vector<double>(hd)), V = K;
    for (std::size_t j = 0; j < T; ++j) {
      for (std::size_t d = 0; d < hd; ++d) {
        K[j][d] = k[j * width + h * hd + d];
        V[j][d] = v[j * width + h * hd + d];
      }
    }
    if (bias) {
      for (std::size_t d = 0; d < hd; ++d) {
        K[T][d] = k_prime[h * hd + d];
        V[T][d] = v_prime[h * hd + d];
      }
    }
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> logit(rows, -std::numeric_limits<double>::infinity());
      for (std::size_t j = 0; j < rows; ++j) {
        const bool visible = j <= i || (j == T && bias && !mask_bias);
        if (!visible) continue;
        double s = 0;
        for (std::size_t d = 0; d < hd; ++d) s += q[i * width + h * hd + d] * K[j][d];
        logit[j] = s / std::sqrt(static_cast<double>(hd));
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (double l : logit) mx = std::max(mx, l);
      double z = 0;
      std::vector<double> p(rows, 0.0);
      for (std::size_t j = 0; j < rows; ++j) {
        if (std::isinf(logit[j])) continue;
        p[j] = std::exp(logit[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < rows; ++j) {
        for (std::size_t d = 0; d < hd; ++d) out[i * width + h * hd + d] += p[j] / z * V[j][d];
      }
    }
  }
  return out;
}

/// Plain (rows x a) * (a x b) with three loops.
inline std::vector<double> loop_matmul(const std::vector<double>& x, const std::vector<double>& w,
                                       std::size_t rows, std::size_t a, std::size_t b) {
  std::vector<double> out(rows * b, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t c = 0; c < b; ++c) out[r * b + c] += x[r * a + i] * w[i * b + c];
  return out;
}

/// Perplexity with one forward per window and a hand-written log-softmax.
template <typename T>
inline double flat_loop_perplexity(const Model<T>& model,
                                   const std::vector<EvalWindow>& windows, bool bos) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    auto logits = forward(model, TokenBatch::single(w.ids)).logits;
    const std::size_t V = logits.cols();
    for (std::size_t t = 0; t + 1 < w.ids.size(); ++t) {
      const std::int32_t target = w.ids[t + 1];
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < V; ++c) mx = std::max<double>(mx, logits[t * V + c]);
      double z = 0;
      for (std::size_t c = 0; c < V; ++c) z += std::exp(double(logits[t * V + c]) - mx);
      total += -(double(logits[t * V + target]) - mx - std::log(z));
      ++count;
    }
  }
  (void)bos;
  return std::exp(total / static_cast<double>(count));
}

/// Small model for fast tests.
inline ModelConfig tiny_config(ModelFamily family = ModelFamily::llama_style,
                               AttentionKind attention = AttentionKind::standard,
                               std::optional<NormKind> norm = std::nullopt) {
  ModelConfig c = ModelConfig::desk_reference(family);
  c.hidden_size = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.intermediate_size = family == ModelFamily::llama_style ? 40 : 64;
  c.max_positions = 32;
  c.attention = attention;
  if (norm) c.norm = *norm;
  c.embed_scaler = c.norm == NormKind::dyt;
  return c;
}

template <typename T = float>
inline Model<T> tiny_model(const ModelConfig& c, std::uint64_t seed = 11) {
  return build_model<T>(c, InitScheme::preset(c, seed));
}

}  // namespace malab::testing
