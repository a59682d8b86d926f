#include "malab/run_config.hpp"

#include <charconv>

namespace malab {

namespace {

ConfigField field(std::string path, FieldType type, ojson def, std::string help) {
  return {std::move(path), type, std::move(def), std::move(help)};
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    parts.emplace_back(path.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

const ConfigField* find_field(std::string_view path) {
  for (const auto& f : run_config_schema()) {
    if (f.path == path) return &f;
  }
  return nullptr;
}

ojson& slot(ojson& doc, std::string_view path) {
  ojson* node = &doc;
  for (const auto& part : split_path(path)) node = &(*node)[part];
  return *node;
}

const ojson& lookup(const ojson& doc, std::string_view path) {
  const ojson* node = &doc;
  for (const auto& part : split_path(path)) node = &node->at(part);
  return *node;
}

bool type_ok(const ojson& v, FieldType t) {
  switch (t) {
    case FieldType::integer: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case FieldType::number: return v.is_number();
    case FieldType::boolean: return v.is_boolean();
    case FieldType::string: return v.is_string();
  }
  return false;
}

std::string_view type_name(FieldType t) {
  switch (t) {
    case FieldType::integer: return "a non-negative integer";
    case FieldType::number: return "a number";
    case FieldType::boolean: return "a boolean";
    case FieldType::string: return "a string";
  }
  return "?";
}

void merge_into(ojson& base, const ojson& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config: '" + (prefix.empty() ? std::string("<root>") : prefix) +
                      "' must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (base[key].is_object()) {
      merge_into(base[key], value, path);
      continue;
    }
    const ConfigField* f = find_field(path);
    if (!f) throw ConfigError("config: unknown key '" + path + "'");
    if (value.is_null()) {
      if (!f->default_value.is_null()) {
        throw ConfigError("config: '" + path + "' cannot be null");
      }
    } else if (!type_ok(value, f->type)) {
      throw ConfigError("config: '" + path + "' must be " + std::string(type_name(f->type)));
    }
    base[key] = value;
  }
}

template <typename V>
V get(const ojson& doc, std::string_view path) {
  return lookup(doc, path).get<V>();
}

}  // namespace

const std::vector<ConfigField>& run_config_schema() {
  using F = FieldType;
  static const std::vector<ConfigField> schema{
      field("model.family", F::string, "llama_style", "gpt2_style or llama_style"),
      field("model.hidden_size", F::integer, 128, "model width"),
      field("model.intermediate_size", F::integer, nullptr, "MLP width (default: 344 llama, 512 gpt2)"),
      field("model.n_layers", F::integer, 4, "decoder layers"),
      field("model.n_heads", F::integer, 4, "attention heads"),
      field("model.vocab_size", F::integer, 259, "vocabulary size"),
      field("model.max_positions", F::integer, 256, "maximum sequence length"),
      field("model.norm", F::string, nullptr, "layer_norm, rms_norm or dyt (default: family)"),
      field("model.attention", F::string, "standard", "standard or kv_bias"),
      field("model.norm_epsilon", F::number, 1e-5, "LayerNorm/RMSNorm epsilon"),
      field("model.dyt_alpha_attention", F::number, 1.0, "DyT alpha before attention"),
      field("model.dyt_alpha_mlp", F::number, 0.5, "DyT alpha before the MLP"),
      field("model.dyt_alpha_final", F::number, 0.5, "DyT alpha before the unembedding"),
      field("model.embed_scaler", F::boolean, nullptr, "learnable embedding scaler (default: on for dyt)"),
      field("model.tie_embeddings", F::boolean, false, "share input and output embeddings"),
      field("init.base_std", F::number, nullptr, "init std (default: family preset)"),
      field("init.residual_scaling", F::string, nullptr, "none, gpt2_residual or lir (default: family preset)"),
      field("train.beta1", F::number, 0.9, "AdamW beta1"),
      field("train.beta2", F::number, 0.95, "AdamW beta2"),
      field("train.eps", F::number, 1e-7, "AdamW epsilon"),
      field("train.peak_lr", F::number, 6e-4, "learning rate after warmup"),
      field("train.end_lr", F::number, 6e-5, "learning rate at total_tokens"),
      field("train.warmup_tokens", F::integer, 65536, "linear warmup length in tokens"),
      field("train.total_tokens", F::integer, 2097152, "training length in tokens"),
      field("train.weight_decay", F::number, 0.1, "decoupled weight decay"),
      field("train.grad_clip_norm", F::number, 1.0, "global gradient norm limit"),
      field("train.batch_size", F::integer, 8, "sequences per step"),
      field("train.context_len", F::integer, 256, "tokens per sequence"),
      field("train.eval_every_tokens", F::integer, 524288, "evaluation period in tokens (0: final only)"),
      field("train.eval_windows", F::integer, 16, "held-out windows per evaluation"),
      field("train.checkpoint_every_tokens", F::integer, 0, "checkpoint period in tokens (0: final only)"),
      field("train.alias_bos_eos", F::boolean, false, "use the EOS id as BOS"),
      field("tvr.target_std", F::number, nullptr, "enable TVR with this target std"),
      field("tvr.interval_steps", F::integer, 100, "TVR period in optimizer steps"),
      field("data.train", F::string, "data/moby_dick_train.jsonl", "training corpus"),
      field("data.heldout", F::string, "data/moby_dick_heldout.jsonl", "held-out corpus"),
      field("data.probe_text", F::string, "Summer is warm. Winter is cold", "probe input during training"),
      field("seed", F::integer, 0, "seed for init and data order"),
      field("threads", F::integer, 0, "OpenMP threads (0: runtime default, 1: reference mode)"),
  };
  return schema;
}

ojson default_run_config() {
  ojson doc = ojson::object();
  for (const auto& f : run_config_schema()) slot(doc, f.path) = f.default_value;
  return doc;
}

ojson merge_run_config(ojson base, const ojson& user) {
  merge_into(base, user, "");
  return base;
}

void apply_override(ojson& doc, std::string_view path, std::string_view text) {
  const ConfigField* f = find_field(path);
  if (!f) throw ConfigError("config: unknown key '" + std::string(path) + "'");
  const std::string where = "--" + std::string(path);
  if ((text == "null" || text == "auto") && f->default_value.is_null()) {
    slot(doc, path) = nullptr;
    return;
  }
  ojson v;
  switch (f->type) {
    case FieldType::integer: {
      std::uint64_t x = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (ec != std::errc() || p != text.data() + text.size()) {
        throw ConfigError(where + ": '" + std::string(text) + "' is not a non-negative integer");
      }
      v = x;
      break;
    }
    case FieldType::number: {
      double x = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (ec != std::errc() || p != text.data() + text.size()) {
        throw ConfigError(where + ": '" + std::string(text) + "' is not a number");
      }
      v = x;
      break;
    }
    case FieldType::boolean:
      if (text == "true" || text == "on" || text == "1") {
        v = true;
      } else if (text == "false" || text == "off" || text == "0") {
        v = false;
      } else {
        throw ConfigError(where + ": '" + std::string(text) + "' is not a boolean");
      }
      break;
    case FieldType::string:
      v = std::string(text);
      break;
  }
  slot(doc, path) = std::move(v);
}

RunConfig resolve_run_config(const ojson& input) {
  ojson doc = merge_run_config(default_run_config(), input);
  RunConfig rc;
  try {
    auto& m = rc.model;
    m.family = parse_model_family(get<std::string>(doc, "model.family"));
    const auto desk = ModelConfig::desk_reference(m.family);
    m.hidden_size = get<std::size_t>(doc, "model.hidden_size");
    m.n_layers = get<std::size_t>(doc, "model.n_layers");
    m.n_heads = get<std::size_t>(doc, "model.n_heads");
    m.vocab_size = get<std::size_t>(doc, "model.vocab_size");
    m.max_positions = get<std::size_t>(doc, "model.max_positions");
    auto& inter = slot(doc, "model.intermediate_size");
    if (inter.is_null()) {
      // Keep the desk ratios when the width changes.
      inter = m.family == ModelFamily::llama_style
                  ? ((m.hidden_size * 8 / 3 + 7) / 8) * 8
                  : 4 * m.hidden_size;
    }
    m.intermediate_size = inter.get<std::size_t>();
    auto& norm = slot(doc, "model.norm");
    if (norm.is_null()) norm = std::string(to_string(desk.norm));
    m.norm = parse_norm_kind(norm.get<std::string>());
    norm = std::string(to_string(m.norm));
    m.attention = parse_attention_kind(get<std::string>(doc, "model.attention"));
    m.norm_epsilon = get<double>(doc, "model.norm_epsilon");
    m.dyt_alpha_attention = get<double>(doc, "model.dyt_alpha_attention");
    m.dyt_alpha_mlp = get<double>(doc, "model.dyt_alpha_mlp");
    m.dyt_alpha_final = get<double>(doc, "model.dyt_alpha_final");
    auto& scaler = slot(doc, "model.embed_scaler");
    if (scaler.is_null()) scaler = m.norm == NormKind::dyt;
    m.embed_scaler = scaler.get<bool>();
    m.tie_embeddings = get<bool>(doc, "model.tie_embeddings");
    m.validate();

    rc.seed = get<std::uint64_t>(doc, "seed");
    rc.init = InitScheme::preset(m, rc.seed);
    auto& base_std = slot(doc, "init.base_std");
    if (base_std.is_null()) base_std = rc.init.base_std;
    rc.init.base_std = base_std.get<double>();
    auto& resid = slot(doc, "init.residual_scaling");
    if (resid.is_null()) resid = std::string(to_string(rc.init.residual_scaling));
    rc.init.residual_scaling = parse_residual_scaling(resid.get<std::string>());
    rc.init.validate();

    auto& t = rc.train;
    t.beta1 = get<double>(doc, "train.beta1");
    t.beta2 = get<double>(doc, "train.beta2");
    t.eps = get<double>(doc, "train.eps");
    t.peak_lr = get<double>(doc, "train.peak_lr");
    t.end_lr = get<double>(doc, "train.end_lr");
    t.warmup_tokens = get<std::size_t>(doc, "train.warmup_tokens");
    t.total_tokens = get<std::size_t>(doc, "train.total_tokens");
    t.weight_decay = get<double>(doc, "train.weight_decay");
    t.grad_clip_norm = get<double>(doc, "train.grad_clip_norm");
    t.batch_size = get<std::size_t>(doc, "train.batch_size");
    t.context_len = get<std::size_t>(doc, "train.context_len");
    t.eval_every_tokens = get<std::size_t>(doc, "train.eval_every_tokens");
    t.eval_windows = get<std::size_t>(doc, "train.eval_windows");
    t.checkpoint_every_tokens = get<std::size_t>(doc, "train.checkpoint_every_tokens");
    t.alias_bos_eos = get<bool>(doc, "train.alias_bos_eos");
    t.seed = rc.seed;
    const auto& tvr_std = lookup(doc, "tvr.target_std");
    if (!tvr_std.is_null()) {
      TVRConfig tvr;
      tvr.target_std = tvr_std.get<double>();
      tvr.interval_steps = get<std::size_t>(doc, "tvr.interval_steps");
      t.tvr = tvr;
    }
    t.validate();
    if (t.context_len > m.max_positions) {
      throw ConfigError("config: train.context_len exceeds model.max_positions");
    }

    rc.train_data = get<std::string>(doc, "data.train");
    rc.heldout_data = get<std::string>(doc, "data.heldout");
    rc.probe_text = get<std::string>(doc, "data.probe_text");
    rc.threads = static_cast<int>(get<std::size_t>(doc, "threads"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  rc.effective = std::move(doc);
  return rc;
}

}  // namespace malab
