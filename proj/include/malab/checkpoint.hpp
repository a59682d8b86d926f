#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "malab/model.hpp"
#include "malab/optimizer.hpp"

namespace malab {

using ojson = nlohmann::ordered_json;

inline constexpr std::uint32_t kCheckpointVersion = 1;

ojson model_config_to_json(const ModelConfig& config);
/// Strict: unknown keys, missing keys and wrong types raise FormatError.
ModelConfig model_config_from_json(const ojson& j);

struct Checkpoint {
  Model<float> model;
  std::optional<AdamWState<float>> optimizer;
  ojson trainer_state;  // null when absent
  ojson metadata;       // null when absent
};

/// Layout: 8-byte magic "MALABCK1", u64 little-endian header length, the
/// JSON header, then the payload of little-endian f32 buffers in manifest
/// order (parameters, then Adam first and second moments when present).
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamWState<float>* optimizer = nullptr,
                     const ojson& trainer_state = nullptr, const ojson& metadata = nullptr);

/// Throws FormatError for a bad magic, an unknown version, a corrupt
/// header or a payload whose length disagrees with the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace malab
