#include "malab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace malab {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'L', 'A', 'B', 'C', 'K', '1'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out{};
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  }
  return v;
}

void append_floats(std::string& out, std::span<const float> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + at + 4 * i, &bits, 4);
  }
}

void read_floats(const char* src, std::span<float> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + 4 * i, 4);
    dst[i] = std::bit_cast<float>(to_little(bits));
  }
}

template <typename V>
V get_field(const ojson& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("model config: missing key '") + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("model config: key '") + key + "' has the wrong type");
  }
}

}  // namespace

ojson model_config_to_json(const ModelConfig& c) {
  ojson j;
  j["family"] = std::string(to_string(c.family));
  j["hidden_size"] = c.hidden_size;
  j["intermediate_size"] = c.intermediate_size;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["vocab_size"] = c.vocab_size;
  j["max_positions"] = c.max_positions;
  j["norm"] = std::string(to_string(c.norm));
  j["attention"] = std::string(to_string(c.attention));
  j["norm_epsilon"] = c.norm_epsilon;
  j["dyt_alpha_attention"] = c.dyt_alpha_attention;
  j["dyt_alpha_mlp"] = c.dyt_alpha_mlp;
  j["dyt_alpha_final"] = c.dyt_alpha_final;
  j["embed_scaler"] = c.embed_scaler;
  j["tie_embeddings"] = c.tie_embeddings;
  return j;
}

ModelConfig model_config_from_json(const ojson& j) {
  if (!j.is_object()) throw FormatError("model config must be a JSON object");
  static const std::set<std::string> known{
      "family",       "hidden_size",         "intermediate_size", "n_layers",
      "n_heads",      "vocab_size",          "max_positions",     "norm",
      "attention",    "norm_epsilon",        "dyt_alpha_attention", "dyt_alpha_mlp",
      "dyt_alpha_final", "embed_scaler",     "tie_embeddings"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw FormatError("model config: unknown key '" + key + "'");
  }
  ModelConfig c;
  try {
    c.family = parse_model_family(get_field<std::string>(j, "family"));
    c.norm = parse_norm_kind(get_field<std::string>(j, "norm"));
    c.attention = parse_attention_kind(get_field<std::string>(j, "attention"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.hidden_size = get_field<std::size_t>(j, "hidden_size");
  c.intermediate_size = get_field<std::size_t>(j, "intermediate_size");
  c.n_layers = get_field<std::size_t>(j, "n_layers");
  c.n_heads = get_field<std::size_t>(j, "n_heads");
  c.vocab_size = get_field<std::size_t>(j, "vocab_size");
  c.max_positions = get_field<std::size_t>(j, "max_positions");
  c.norm_epsilon = get_field<double>(j, "norm_epsilon");
  c.dyt_alpha_attention = get_field<double>(j, "dyt_alpha_attention");
  c.dyt_alpha_mlp = get_field<double>(j, "dyt_alpha_mlp");
  c.dyt_alpha_final = get_field<double>(j, "dyt_alpha_final");
  c.embed_scaler = get_field<bool>(j, "embed_scaler");
  c.tie_embeddings = get_field<bool>(j, "tie_embeddings");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamWState<float>* optimizer, const ojson& trainer_state,
                     const ojson& metadata) {
  const auto params = model.parameters();
  if (optimizer && !optimizer->m.empty() &&
      (optimizer->m.size() != params.size() || optimizer->v.size() != params.size())) {
    throw ContractError("save_checkpoint: optimizer state does not match the model");
  }
  std::string payload;
  ojson manifest = ojson::array();
  auto add = [&](const std::string& name, const std::string& section, const Shape& shape,
                 std::span<const float> values) {
    ojson e;
    e["name"] = name;
    e["section"] = section;
    e["shape"] = shape;
    e["offset"] = payload.size();
    e["nbytes"] = values.size() * 4;
    manifest.push_back(std::move(e));
    append_floats(payload, values);
  };
  for (const auto& p : params) add(p.name, "param", p.tensor.shape(), p.tensor.data());
  const bool with_moments = optimizer && !optimizer->m.empty();
  if (with_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      add(params[i].name, "adam_m", params[i].tensor.shape(), optimizer->m[i]);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      add(params[i].name, "adam_v", params[i].tensor.shape(), optimizer->v[i]);
    }
  }
  ojson header;
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = "f32";
  header["endianness"] = "little";
  header["model_config"] = model_config_to_json(model.config);
  header["payload_bytes"] = payload.size();
  header["manifest"] = std::move(manifest);
  if (optimizer) {
    header["optimizer"] = {{"kind", "adamw"}, {"step", optimizer->step}, {"moments", with_moments}};
  } else {
    header["optimizer"] = nullptr;
  }
  header["trainer_state"] = trainer_state;
  header["metadata"] = metadata;
  const std::string hdr = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + tmp.string());
    const std::uint64_t hlen = to_little(static_cast<std::uint64_t>(hdr.size()));
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0) {
    throw FormatError(where + "not a malab checkpoint (bad magic)");
  }
  std::uint64_t hlen;
  std::memcpy(&hlen, blob.data() + 8, 8);
  hlen = to_little(hlen);
  if (hlen > blob.size() - 16) throw FormatError(where + "header length exceeds file size");
  ojson header;
  try {
    header = ojson::parse(blob.begin() + 16, blob.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "corrupt header: " + e.what());
  }
  try {
    const auto version = header.at("format_version").get<std::uint32_t>();
    if (version != kCheckpointVersion) {
      throw FormatError(where + "unsupported format version " + std::to_string(version) +
                        " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    const std::uint64_t actual = blob.size() - 16 - hlen;
    if (actual != payload_bytes) {
      throw FormatError(where + "payload length mismatch: header declares " +
                        std::to_string(payload_bytes) + " bytes, file holds " +
                        std::to_string(actual));
    }
    const char* payload = blob.data() + 16 + hlen;

    Checkpoint ck{allocate_model<float>(model_config_from_json(header.at("model_config"))),
                  std::nullopt, header.value("trainer_state", ojson()),
                  header.value("metadata", ojson())};
    const auto params = ck.model.parameters();
    const auto& manifest = header.at("manifest");
    const bool has_opt = header.contains("optimizer") && !header["optimizer"].is_null();
    const bool moments = has_opt && header["optimizer"].at("moments").get<bool>();
    const std::size_t expect_entries = params.size() * (moments ? 3 : 1);
    if (manifest.size() != expect_entries) {
      throw FormatError(where + "manifest lists " + std::to_string(manifest.size()) +
                        " tensors, expected " + std::to_string(expect_entries));
    }
    if (has_opt) {
      AdamWState<float> st;
      st.step = header["optimizer"].at("step").get<std::size_t>();
      if (moments) {
        st.m.resize(params.size());
        st.v.resize(params.size());
      }
      ck.optimizer = std::move(st);
    }
    std::uint64_t cursor = 0;
    for (std::size_t e = 0; e < manifest.size(); ++e) {
      const auto& entry = manifest[e];
      const std::size_t i = e % params.size();
      const std::size_t section_idx = e / params.size();
      static const char* sections[] = {"param", "adam_m", "adam_v"};
      const auto& p = params[i];
      if (entry.at("name").get<std::string>() != p.name ||
          entry.at("section").get<std::string>() != sections[section_idx]) {
        throw FormatError(where + "manifest entry " + std::to_string(e) + " is '" +
                          entry.at("name").get<std::string>() + "', expected '" + p.name + "'");
      }
      if (entry.at("shape").get<Shape>() != p.tensor.shape()) {
        throw FormatError(where + "shape mismatch for " + p.name);
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (offset != cursor || nbytes != p.tensor.numel() * 4 || offset + nbytes > payload_bytes) {
        throw FormatError(where + "manifest offsets for " + p.name + " do not tile the payload");
      }
      cursor += nbytes;
      if (section_idx == 0) {
        Tensor<float> t = p.tensor;
        read_floats(payload + offset, t.data());
      } else {
        auto& dst = section_idx == 1 ? ck.optimizer->m[i] : ck.optimizer->v[i];
        dst.resize(p.tensor.numel());
        read_floats(payload + offset, dst);
      }
    }
    if (cursor != payload_bytes) throw FormatError(where + "manifest does not cover the payload");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "malformed header: " + e.what());
  }
}

}  // namespace malab
