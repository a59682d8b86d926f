#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "malab/tensor.hpp"

namespace malab {

// ---------------------------------------------------------------------------
// Normalization

enum class NormKind { layer_norm, rms_norm, dyt };

std::string_view to_string(NormKind kind);
NormKind parse_norm_kind(std::string_view name);

/// Parameters of one normalization site. Only the fields that apply to
/// `kind` are defined: beta is absent for RMSNorm, alpha is DyT-only and
/// epsilon is ignored by DyT.
template <typename T>
struct NormParams {
  NormKind kind = NormKind::rms_norm;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> alpha;  // single element
  double epsilon = 1e-5;
};

template <typename T>
NormParams<T> make_norm(NormKind kind, std::size_t width, double epsilon, double alpha);

/// (x - mean) / sqrt(var + eps) * gamma + beta, per row.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double epsilon);

/// x / sqrt(mean(x^2) + eps) * gamma, per row.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, double epsilon);

/// Dynamic Tanh: gamma * tanh(alpha * x) + beta. Bounded by |gamma| around
/// beta regardless of the input magnitude.
template <typename T>
Tensor<T> dyt(const Tensor<T>& x, const Tensor<T>& alpha, const Tensor<T>& gamma,
              const Tensor<T>& beta);

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, const NormParams<T>& params);

// ---------------------------------------------------------------------------
// Feed-forward

enum class MlpKind { gelu, swiglu };

template <typename T>
struct MlpParams {
  MlpKind kind = MlpKind::swiglu;
  Tensor<T> w_up;    // width x intermediate
  Tensor<T> w_gate;  // width x intermediate, SwiGLU only
  Tensor<T> w_down;  // intermediate x width
};

/// gelu(x W_up) W_down
template <typename T>
Tensor<T> gelu_mlp(const Tensor<T>& x, const MlpParams<T>& w);

/// (silu(x W_gate) * (x W_up)) W_down
template <typename T>
Tensor<T> swiglu_mlp(const Tensor<T>& x, const MlpParams<T>& w);

template <typename T>
Tensor<T> apply_mlp(const Tensor<T>& x, const MlpParams<T>& w);

// ---------------------------------------------------------------------------
// Rotary position embedding

inline constexpr double kRopeBase = 10000.0;

/// Rotates each consecutive pair (x[2j], x[2j+1]) inside every head_dim-wide
/// block of row r by positions[r] * base^(-2j / head_dim).
/// Throws ConfigError for odd head_dim.
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const double> positions,
                     std::size_t head_dim, double base = kRopeBase);

/// Positions row % seq_len for a (batch * seq_len) x width tensor.
std::vector<double> sequence_positions(std::size_t rows, std::size_t seq_len);

// ---------------------------------------------------------------------------
// Attention

/// Learnable per-head key/value bias slot, one row per head.
template <typename T>
struct KVBiasParams {
  Tensor<T> k_prime;  // n_heads x head_dim
  Tensor<T> v_prime;  // n_heads x head_dim
};

template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // width x width, no bias terms
  std::size_t n_heads = 1;
  std::size_t head_dim = 1;
  std::optional<KVBiasParams<T>> kv_bias;

  std::size_t width() const { return n_heads * head_dim; }
};

/// What one head saw for batch element 0: logits and probabilities with a
/// column per key slot (real positions, then the bias slot when present).
/// Masked logits hold NaN; masked probabilities hold 0.
struct AttentionHeadCapture {
  std::size_t seq_len = 0;
  std::size_t head_dim = 0;
  bool has_bias_slot = false;
  std::vector<double> logits;  // seq_len x slots()
  std::vector<double> probs;   // seq_len x slots()
  std::vector<double> values;  // slots() x head_dim, bias value last
  std::vector<double> output;  // seq_len x head_dim, before output projection

  std::size_t slots() const { return seq_len + (has_bias_slot ? 1 : 0); }
  double prob(std::size_t query, std::size_t slot) const { return probs[query * slots() + slot]; }
  double logit(std::size_t query, std::size_t slot) const { return logits[query * slots() + slot]; }
};

struct AttentionLayerCapture {
  std::vector<AttentionHeadCapture> heads;
};

struct AttentionGeometry {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t n_heads = 1;
  std::size_t head_dim = 1;
};

struct AttentionOptions {
  bool rope = false;
  double rope_base = kRopeBase;
  /// Test hook: forces the bias-slot logit to -inf.
  bool mask_bias_slot = false;
  AttentionLayerCapture* capture = nullptr;
};

/// Causal scaled-dot-product attention over projected q, k, v laid out as
/// (batch * seq_len) x (n_heads * head_dim). With `bias`, every query also
/// sees one extra slot whose key/value are the head's k', v'.
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const AttentionGeometry& geometry, const KVBiasParams<T>* bias,
                         const AttentionOptions& options = {});

/// Standard causal multi-head attention: project, attend, output-project.
/// Any kv_bias in `params` is ignored.
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                           const AttentionParams<T>& params, std::size_t seq_len,
                           const AttentionOptions& options = {});

/// Attention with the explicit key/value bias slot. Throws ConfigError when
/// `params.kv_bias` is missing.
template <typename T>
Tensor<T> kv_bias_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                            const AttentionParams<T>& params, std::size_t seq_len,
                            const AttentionOptions& options = {});

}  // namespace malab
