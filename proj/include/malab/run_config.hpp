#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "malab/init_variance.hpp"
#include "malab/model.hpp"
#include "malab/trainer.hpp"

namespace malab {

using ojson = nlohmann::ordered_json;

enum class FieldType { integer, number, boolean, string };

struct ConfigField {
  std::string path;  // dotted, e.g. "model.hidden_size"
  FieldType type;
  ojson default_value;  // null means "derived from other fields"
  std::string help;
};

/// Every key a run config may hold.
const std::vector<ConfigField>& run_config_schema();

/// Nested document holding every schema default.
ojson default_run_config();

/// Overlays `user` on `base`. Unknown keys and type mismatches raise
/// ConfigError naming the dotted path.
ojson merge_run_config(ojson base, const ojson& user);

/// Sets one dotted path from command-line text, parsed per the schema.
/// "null" or "auto" clear a field whose default is derived.
void apply_override(ojson& doc, std::string_view path, std::string_view text);

struct RunConfig {
  ModelConfig model;
  InitScheme init;
  TrainConfig train;
  std::string train_data;
  std::string heldout_data;
  std::string probe_text;
  std::uint64_t seed = 0;
  int threads = 0;
  /// The resolved document with every derived field filled in.
  ojson effective;
};

/// Resolves derived fields (family defaults for intermediate size, norm,
/// init std and residual scaling; embed_scaler follows DyT) and validates.
RunConfig resolve_run_config(const ojson& doc);

}  // namespace malab
