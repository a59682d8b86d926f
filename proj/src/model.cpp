#include "malab/model.hpp"

#include <cmath>
#include <string>

#include "malab/ops.hpp"

namespace malab {

std::string_view to_string(ModelFamily family) {
  return family == ModelFamily::gpt2_style ? "gpt2_style" : "llama_style";
}

std::string_view to_string(AttentionKind kind) {
  return kind == AttentionKind::standard ? "standard" : "kv_bias";
}

ModelFamily parse_model_family(std::string_view name) {
  if (name == "gpt2_style" || name == "gpt2") return ModelFamily::gpt2_style;
  if (name == "llama_style" || name == "llama") return ModelFamily::llama_style;
  throw ConfigError("unknown model family '" + std::string(name) + "'");
}

AttentionKind parse_attention_kind(std::string_view name) {
  if (name == "standard") return AttentionKind::standard;
  if (name == "kv_bias") return AttentionKind::kv_bias;
  throw ConfigError("unknown attention kind '" + std::string(name) + "'");
}

std::string_view to_string(ParamRole role) {
  switch (role) {
    case ParamRole::token_embedding: return "token_embedding";
    case ParamRole::position_embedding: return "position_embedding";
    case ParamRole::embed_scaler: return "embed_scaler";
    case ParamRole::attn_q: return "attn_q";
    case ParamRole::attn_k: return "attn_k";
    case ParamRole::attn_v: return "attn_v";
    case ParamRole::attn_o: return "attn_o";
    case ParamRole::kv_bias_k: return "kv_bias_k";
    case ParamRole::kv_bias_v: return "kv_bias_v";
    case ParamRole::mlp_up: return "mlp_up";
    case ParamRole::mlp_gate: return "mlp_gate";
    case ParamRole::mlp_down: return "mlp_down";
    case ParamRole::norm_gamma: return "norm_gamma";
    case ParamRole::norm_beta: return "norm_beta";
    case ParamRole::dyt_alpha: return "dyt_alpha";
    case ParamRole::lm_head: return "lm_head";
  }
  return "?";
}

bool is_residual_output(ParamRole role) {
  return role == ParamRole::attn_o || role == ParamRole::mlp_down;
}

bool is_decoder_projection(ParamRole role) {
  switch (role) {
    case ParamRole::attn_q:
    case ParamRole::attn_k:
    case ParamRole::attn_v:
    case ParamRole::attn_o:
    case ParamRole::mlp_up:
    case ParamRole::mlp_gate:
    case ParamRole::mlp_down:
      return true;
    default:
      return false;
  }
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (hidden_size == 0) fail("hidden_size must be positive");
  if (intermediate_size == 0) fail("intermediate_size must be positive");
  if (n_layers == 0) fail("n_layers must be positive");
  if (n_heads == 0) fail("n_heads must be positive");
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (max_positions == 0) fail("max_positions must be positive");
  if (hidden_size % n_heads != 0) {
    fail("hidden_size " + std::to_string(hidden_size) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (family == ModelFamily::llama_style && head_dim() % 2 != 0) {
    fail("llama_style needs an even head_dim for rotary embedding");
  }
  if (norm == NormKind::dyt) {
    if (!(dyt_alpha_attention > 0) || !(dyt_alpha_mlp > 0) || !(dyt_alpha_final > 0)) {
      fail("DyT alphas must be positive");
    }
  } else {
    if (!(norm_epsilon > 0)) fail("norm_epsilon must be positive");
    if (embed_scaler) fail("embed_scaler is only used with DyT normalization");
  }
}

ModelConfig ModelConfig::desk_reference(ModelFamily family) {
  ModelConfig c;
  c.family = family;
  c.hidden_size = 128;
  c.n_layers = 4;
  c.n_heads = 4;
  c.vocab_size = 259;
  c.max_positions = 256;
  if (family == ModelFamily::llama_style) {
    c.intermediate_size = 344;
    c.norm = NormKind::rms_norm;
  } else {
    c.intermediate_size = 512;
    c.norm = NormKind::layer_norm;
  }
  return c;
}

template <typename T>
std::vector<NamedParam<T>> Model<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  auto add = [&out](std::string name, ParamRole role, int layer, const Tensor<T>& t) {
    if (t.defined()) out.push_back({std::move(name), role, layer, t});
  };
  auto add_norm = [&add](const std::string& prefix, int layer, const NormParams<T>& n) {
    add(prefix + ".gamma", ParamRole::norm_gamma, layer, n.gamma);
    add(prefix + ".beta", ParamRole::norm_beta, layer, n.beta);
    add(prefix + ".alpha", ParamRole::dyt_alpha, layer, n.alpha);
  };
  add("tok_embedding", ParamRole::token_embedding, -1, token_embedding);
  add("pos_embedding", ParamRole::position_embedding, -1, position_embedding);
  add("embed_scaler", ParamRole::embed_scaler, -1, embed_scaler);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const int li = static_cast<int>(l);
    const std::string p = "layers." + std::to_string(l);
    add_norm(p + ".attn_norm", li, L.attn_norm);
    add(p + ".attn.wq", ParamRole::attn_q, li, L.attn.wq);
    add(p + ".attn.wk", ParamRole::attn_k, li, L.attn.wk);
    add(p + ".attn.wv", ParamRole::attn_v, li, L.attn.wv);
    add(p + ".attn.wo", ParamRole::attn_o, li, L.attn.wo);
    if (L.attn.kv_bias) {
      add(p + ".attn.k_prime", ParamRole::kv_bias_k, li, L.attn.kv_bias->k_prime);
      add(p + ".attn.v_prime", ParamRole::kv_bias_v, li, L.attn.kv_bias->v_prime);
    }
    add_norm(p + ".mlp_norm", li, L.mlp_norm);
    add(p + ".mlp.w_gate", ParamRole::mlp_gate, li, L.mlp.w_gate);
    add(p + ".mlp.w_up", ParamRole::mlp_up, li, L.mlp.w_up);
    add(p + ".mlp.w_down", ParamRole::mlp_down, li, L.mlp.w_down);
  }
  add_norm("final_norm", -1, final_norm);
  add("lm_head", ParamRole::lm_head, -1, lm_head);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
Model<T> allocate_model(const ModelConfig& config) {
  config.validate();
  Model<T> m;
  m.config = config;
  const std::size_t d = config.hidden_size, ff = config.intermediate_size;
  auto weight = [](Shape s) { return Tensor<T>(std::move(s), T(0), true); };
  m.token_embedding = weight({config.vocab_size, d});
  if (config.family == ModelFamily::gpt2_style) {
    m.position_embedding = weight({config.max_positions, d});
  }
  if (config.embed_scaler) {
    m.embed_scaler = Tensor<T>::scalar(static_cast<T>(std::sqrt(static_cast<double>(d))), true);
  }
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    DecoderLayer<T> L;
    L.attn_norm = make_norm<T>(config.norm, d, config.norm_epsilon, config.dyt_alpha_attention);
    L.mlp_norm = make_norm<T>(config.norm, d, config.norm_epsilon, config.dyt_alpha_mlp);
    L.attn.n_heads = config.n_heads;
    L.attn.head_dim = config.head_dim();
    L.attn.wq = weight({d, d});
    L.attn.wk = weight({d, d});
    L.attn.wv = weight({d, d});
    L.attn.wo = weight({d, d});
    if (config.attention == AttentionKind::kv_bias) {
      L.attn.kv_bias = KVBiasParams<T>{weight({config.n_heads, config.head_dim()}),
                                       weight({config.n_heads, config.head_dim()})};
    }
    if (config.family == ModelFamily::llama_style) {
      L.mlp.kind = MlpKind::swiglu;
      L.mlp.w_gate = weight({d, ff});
    } else {
      L.mlp.kind = MlpKind::gelu;
    }
    L.mlp.w_up = weight({d, ff});
    L.mlp.w_down = weight({ff, d});
    m.layers.push_back(std::move(L));
  }
  m.final_norm = make_norm<T>(config.norm, d, config.norm_epsilon, config.dyt_alpha_final);
  if (!config.tie_embeddings) m.lm_head = weight({d, config.vocab_size});
  return m;
}

template <typename T>
Model<T> clone_model(const Model<T>& model) {
  Model<T> copy = allocate_model<T>(model.config);
  const auto src = model.parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = src[i].tensor.data();
    std::copy(s.begin(), s.end(), dst[i].tensor.data().begin());
  }
  return copy;
}

TokenBatch TokenBatch::single(std::span<const std::int32_t> tokens) {
  TokenBatch b;
  b.batch = 1;
  b.seq_len = tokens.size();
  b.ids.assign(tokens.begin(), tokens.end());
  return b;
}

namespace {

void validate_tokens(const ModelConfig& config, const TokenBatch& tokens) {
  if (tokens.seq_len == 0 || tokens.batch == 0) throw DomainError("forward: empty token batch");
  if (tokens.ids.size() != tokens.batch * tokens.seq_len) {
    throw DimensionError("forward: token batch holds " + std::to_string(tokens.ids.size()) +
                         " ids for " + std::to_string(tokens.batch) + " x " +
                         std::to_string(tokens.seq_len));
  }
  if (tokens.seq_len > config.max_positions) {
    throw InputError("forward: sequence length " + std::to_string(tokens.seq_len) +
                     " exceeds max_positions " + std::to_string(config.max_positions));
  }
  for (std::int32_t id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw InputError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

template <typename T>
void run_hooks(const ForwardOptions<T>& options, std::size_t layer, Tensor<T>& snapshot,
               const TokenBatch& tokens) {
  for (const auto& hook : options.hooks) hook(layer, snapshot, tokens);
}

template <typename T>
Tensor<T> unembed(const Model<T>& model, const Tensor<T>& x) {
  auto h = apply_norm(x, model.final_norm);
  return model.lm_head.defined() ? ops::matmul(h, model.lm_head)
                                 : ops::matmul_nt(h, model.token_embedding);
}

template <typename T>
void run_stack(const Model<T>& model, const TokenBatch& tokens, std::size_t first_layer,
               Tensor<T> x, const ForwardOptions<T>& options, ForwardResult<T>& result) {
  auto& trace = result.trace;
  for (std::size_t l = first_layer; l < model.layers.size(); ++l) {
    Tensor<T> attn_out, mlp_out;
    x = decoder_layer_forward(model, l, x, tokens.seq_len, options, &attn_out, &mlp_out);
    run_hooks(options, l + 1, x, tokens);
    trace.snapshots[l + 1] = x;
    trace.attn_residual[l] = attn_out;
    trace.mlp_residual[l] = mlp_out;
  }
  result.logits = unembed(model, x);
}

template <typename T>
ForwardResult<T> empty_result(const Model<T>& model, const TokenBatch& tokens) {
  ForwardResult<T> r;
  r.trace.batch = tokens.batch;
  r.trace.seq_len = tokens.seq_len;
  r.trace.snapshots.resize(model.layers.size() + 1);
  r.trace.attn_residual.resize(model.layers.size());
  r.trace.mlp_residual.resize(model.layers.size());
  return r;
}

}  // namespace

template <typename T>
Tensor<T> embed_with_scaler(const Model<T>& model, const TokenBatch& tokens) {
  validate_tokens(model.config, tokens);
  auto x = ops::embedding(model.token_embedding, std::span<const std::int32_t>(tokens.ids));
  if (model.embed_scaler.defined()) x = ops::mul_scalar(x, model.embed_scaler);
  if (model.position_embedding.defined()) {
    std::vector<std::int32_t> pos(tokens.ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      pos[i] = static_cast<std::int32_t>(i % tokens.seq_len);
    }
    x = ops::add(x, ops::embedding(model.position_embedding, std::span<const std::int32_t>(pos)));
  }
  return x;
}

template <typename T>
Tensor<T> decoder_layer_forward(const Model<T>& model, std::size_t layer, const Tensor<T>& x,
                                std::size_t seq_len, const ForwardOptions<T>& options,
                                Tensor<T>* attn_out, Tensor<T>* mlp_out) {
  const auto& L = model.layers.at(layer);
  AttentionOptions aopts;
  aopts.rope = model.has_rotary();
  aopts.mask_bias_slot = options.mask_bias_slot;
  if (options.attention) {
    if (options.attention->size() != model.layers.size()) {
      options.attention->resize(model.layers.size());
    }
    aopts.capture = &(*options.attention)[layer];
  }
  auto h = apply_norm(x, L.attn_norm);
  auto a = model.config.attention == AttentionKind::kv_bias
               ? kv_bias_attention(h, h, h, L.attn, seq_len, aopts)
               : causal_attention(h, h, h, L.attn, seq_len, aopts);
  auto mid = ops::add(x, a);
  auto m = apply_mlp(apply_norm(mid, L.mlp_norm), L.mlp);
  if (attn_out) *attn_out = a;
  if (mlp_out) *mlp_out = m;
  return ops::add(mid, m);
}

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const TokenBatch& tokens,
                         const ForwardOptions<T>& options) {
  auto result = empty_result(model, tokens);
  auto x = embed_with_scaler(model, tokens);
  run_hooks(options, 0, x, tokens);
  result.trace.snapshots[0] = x;
  run_stack(model, tokens, 0, x, options, result);
  return result;
}

template <typename T>
ForwardResult<T> forward_with_trace(const Model<T>& model, std::span<const std::int32_t> tokens,
                                    const ForwardOptions<T>& options) {
  return forward(model, TokenBatch::single(tokens), options);
}

template <typename T>
ForwardResult<T> resume_from(const Model<T>& model, const TokenBatch& tokens, std::size_t layer,
                             const Tensor<T>& snapshot, const ForwardOptions<T>& options) {
  validate_tokens(model.config, tokens);
  if (layer > model.layers.size()) throw ContractError("resume_from: layer out of range");
  const Shape expect{tokens.batch * tokens.seq_len, model.config.hidden_size};
  if (snapshot.shape() != expect) {
    throw DimensionError("resume_from: snapshot shape " + shape_to_string(snapshot.shape()) +
                         ", expected " + shape_to_string(expect));
  }
  auto result = empty_result(model, tokens);
  result.trace.snapshots[layer] = snapshot;
  run_stack(model, tokens, layer, snapshot, options, result);
  return result;
}

#define MALAB_INSTANTIATE_MODEL(T)                                                         \
  template struct Model<T>;                                                                \
  template Model<T> allocate_model<T>(const ModelConfig&);                                 \
  template Model<T> clone_model(const Model<T>&);                                          \
  template Tensor<T> embed_with_scaler(const Model<T>&, const TokenBatch&);                \
  template Tensor<T> decoder_layer_forward(const Model<T>&, std::size_t, const Tensor<T>&, \
                                           std::size_t, const ForwardOptions<T>&,          \
                                           Tensor<T>*, Tensor<T>*);                        \
  template ForwardResult<T> forward(const Model<T>&, const TokenBatch&,                    \
                                    const ForwardOptions<T>&);                             \
  template ForwardResult<T> forward_with_trace(const Model<T>&,                            \
                                               std::span<const std::int32_t>,              \
                                               const ForwardOptions<T>&);                  \
  template ForwardResult<T> resume_from(const Model<T>&, const TokenBatch&, std::size_t,   \
                                        const Tensor<T>&, const ForwardOptions<T>&);

MALAB_INSTANTIATE_MODEL(float)
MALAB_INSTANTIATE_MODEL(double)

#undef MALAB_INSTANTIATE_MODEL

}  // namespace malab
