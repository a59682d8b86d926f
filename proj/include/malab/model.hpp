#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malab/layers.hpp"
#include "malab/tensor.hpp"

namespace malab {

enum class ModelFamily { gpt2_style, llama_style };
enum class AttentionKind { standard, kv_bias };

std::string_view to_string(ModelFamily family);
std::string_view to_string(AttentionKind kind);
ModelFamily parse_model_family(std::string_view name);
AttentionKind parse_attention_kind(std::string_view name);

struct ModelConfig {
  ModelFamily family = ModelFamily::llama_style;
  std::size_t hidden_size = 128;
  std::size_t intermediate_size = 344;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 259;
  std::size_t max_positions = 256;
  NormKind norm = NormKind::rms_norm;
  AttentionKind attention = AttentionKind::standard;
  double norm_epsilon = 1e-5;
  double dyt_alpha_attention = 1.0;
  double dyt_alpha_mlp = 0.5;
  double dyt_alpha_final = 0.5;
  bool embed_scaler = false;
  bool tie_embeddings = false;

  std::size_t head_dim() const { return hidden_size / n_heads; }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  /// L=4, width 128, 4 heads, byte vocab, context 256. Intermediate size is
  /// 344 for llama_style (8/3 width rounded to a multiple of 8) and 512 for
  /// gpt2_style (4x width).
  static ModelConfig desk_reference(ModelFamily family);
};

enum class ParamRole {
  token_embedding,
  position_embedding,
  embed_scaler,
  attn_q,
  attn_k,
  attn_v,
  attn_o,
  kv_bias_k,
  kv_bias_v,
  mlp_up,
  mlp_gate,
  mlp_down,
  norm_gamma,
  norm_beta,
  dyt_alpha,
  lm_head,
};

std::string_view to_string(ParamRole role);

/// Projections writing into the residual stream (attention output, MLP down).
bool is_residual_output(ParamRole role);
/// Rank-2 decoder projection weights (q, k, v, o, up, gate, down).
bool is_decoder_projection(ParamRole role);

template <typename T>
struct NamedParam {
  std::string name;
  ParamRole role;
  int layer;  // -1 outside the decoder stack
  Tensor<T> tensor;
};

template <typename T>
struct DecoderLayer {
  NormParams<T> attn_norm;
  AttentionParams<T> attn;
  NormParams<T> mlp_norm;
  MlpParams<T> mlp;
};

template <typename T>
struct Model {
  ModelConfig config;
  Tensor<T> token_embedding;     // vocab x width
  Tensor<T> position_embedding;  // max_positions x width, gpt2_style only
  Tensor<T> embed_scaler;        // 1 element, when enabled
  Tensor<T> lm_head;             // width x vocab, absent when tied
  std::vector<DecoderLayer<T>> layers;
  NormParams<T> final_norm;

  /// Every trainable tensor in a fixed order; handles alias the model.
  std::vector<NamedParam<T>> parameters() const;
  std::size_t parameter_count() const;
  bool has_rotary() const { return config.family == ModelFamily::llama_style; }
  bool has_position_table() const { return position_embedding.defined(); }
};

/// Allocates every parameter with zero weights and unit norm scales.
/// Initialization is applied separately (see init_variance.hpp).
template <typename T>
Model<T> allocate_model(const ModelConfig& config);

/// Deep copy.
template <typename T>
Model<T> clone_model(const Model<T>& model);

struct TokenBatch {
  std::size_t batch = 1;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;  // batch * seq_len, row-major

  static TokenBatch single(std::span<const std::int32_t> tokens);
};

/// Residual stream at each hand-off point for one forward pass.
/// snapshots[0] is the embedding output, snapshots[l] the stream after
/// decoder layer l. Each is (batch * seq_len) x width.
template <typename T>
struct HiddenStateTrace {
  std::size_t batch = 1;
  std::size_t seq_len = 0;
  std::vector<Tensor<T>> snapshots;
  std::vector<Tensor<T>> attn_residual;  // layer l-1 -> attention branch output
  std::vector<Tensor<T>> mlp_residual;   // layer l-1 -> MLP branch output

  std::size_t n_layers() const { return snapshots.empty() ? 0 : snapshots.size() - 1; }
};

/// Called with each snapshot before it is handed to the next stage. Hooks
/// may overwrite values in place; downstream layers see the altered data.
template <typename T>
using SnapshotHook = std::function<void(std::size_t layer, Tensor<T>& snapshot, const TokenBatch&)>;

template <typename T>
struct ForwardOptions {
  std::vector<SnapshotHook<T>> hooks;
  /// When set, receives one capture per decoder layer (batch element 0).
  std::vector<AttentionLayerCapture>* attention = nullptr;
  bool mask_bias_slot = false;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // (batch * seq_len) x vocab
  HiddenStateTrace<T> trace;
};

/// Token embedding, times the learnable scaler when enabled, plus the
/// learned position table for gpt2_style.
template <typename T>
Tensor<T> embed_with_scaler(const Model<T>& model, const TokenBatch& tokens);

/// Pre-norm decoder layer: h = x + attn(norm(x)); out = h + mlp(norm(h)).
template <typename T>
Tensor<T> decoder_layer_forward(const Model<T>& model, std::size_t layer, const Tensor<T>& x,
                                std::size_t seq_len, const ForwardOptions<T>& options,
                                Tensor<T>* attn_out = nullptr, Tensor<T>* mlp_out = nullptr);

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const TokenBatch& tokens,
                         const ForwardOptions<T>& options = {});

template <typename T>
ForwardResult<T> forward_with_trace(const Model<T>& model, std::span<const std::int32_t> tokens,
                                    const ForwardOptions<T>& options = {});

/// Runs decoder layers after `layer` starting from `snapshot` and returns
/// the logits. Hooks fire for snapshots layer+1..L.
template <typename T>
ForwardResult<T> resume_from(const Model<T>& model, const TokenBatch& tokens, std::size_t layer,
                             const Tensor<T>& snapshot, const ForwardOptions<T>& options = {});

}  // namespace malab
