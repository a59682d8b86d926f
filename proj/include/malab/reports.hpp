#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "malab/attention_analysis.hpp"
#include "malab/intervention.hpp"
#include "malab/probe.hpp"

namespace malab {

using ojson = nlohmann::ordered_json;

inline constexpr std::string_view kArtifactVersion = "0.1.0";

/// FNV-1a 64 of the compact JSON dump, as 16 lowercase hex digits.
std::string config_hash(const ojson& config);

struct Provenance {
  std::string artifact_version{kArtifactVersion};
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string bos_mode = "on";  // "on", "off" or "n/a"

  ojson to_json() const;
  static Provenance from_json(const ojson& j);
  bool operator==(const Provenance&) const = default;
};

std::string bos_label(bool bos);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Writes `text` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

// Profile CSV: "# key=value" provenance lines, then
// layer,top1,top2,top3,median with one row per snapshot.
struct ProfileReport {
  Provenance provenance;
  std::vector<LayerProfile> rows;
};
std::string render_profile_csv(const ProfileReport& report);
void write_profile_csv(const std::filesystem::path& path, const ProfileReport& report);
ProfileReport parse_profile_csv(std::string_view text);

// Locations JSON: {provenance, layers: [{layer, flagged, max_abs, median_abs}],
// locations: [{layer, token_pos, feat_dim, value}]}.
struct LocationsReport {
  Provenance provenance;
  std::vector<LayerDetection> layers;
  std::vector<ActivationLocation> locations;
};
std::string render_locations_json(const LocationsReport& report);
void write_locations_json(const std::filesystem::path& path, const LocationsReport& report);
LocationsReport parse_locations_json(std::string_view text);

// Mean-table JSON: {provenance, corpus_id, n_samples, bos_mode,
// no_massive_activations, first_emergence_layers, entries: [{key, mean, count}]}
// with keys "layer/dim/bucket".
std::string mean_key(const LocationKey& key);
LocationKey parse_mean_key(std::string_view key);
std::string render_mean_table_json(const MeanTable& table, const Provenance& provenance);
void write_mean_table_json(const std::filesystem::path& path, const MeanTable& table,
                           const Provenance& provenance);
MeanTable parse_mean_table_json(std::string_view text, Provenance* provenance = nullptr);

// Heatmap CSV: provenance lines, header k0..k{T-1}[,bias], one row per
// query; masked cells are empty.
struct HeatmapReport {
  Provenance provenance;
  std::size_t layer = 0;
  std::string quantity = "logit";  // "logit" or "prob"
  Heatmap heatmap;
  bool has_bias_slot = false;
};
std::string render_heatmap_csv(const HeatmapReport& report);
void write_heatmap_csv(const std::filesystem::path& path, const HeatmapReport& report);
HeatmapReport parse_heatmap_csv(std::string_view text);

// Concentration JSON: {provenance, layers: [{layer, first_token, bias_slot}]}.
struct ConcentrationRow {
  std::size_t layer = 0;
  double first_token = 0;
  std::optional<double> bias_slot;
  bool operator==(const ConcentrationRow&) const = default;
};
struct ConcentrationReport {
  Provenance provenance;
  std::vector<ConcentrationRow> layers;
};
std::string render_concentration_json(const ConcentrationReport& report);
void write_concentration_json(const std::filesystem::path& path, const ConcentrationReport& r);
ConcentrationReport parse_concentration_json(std::string_view text);

// Run-report JSON: {provenance, config, results: [{dataset, bos_mode, mode,
// ppl, misses, predicted_tokens}], extra}.
struct PerplexityRow {
  std::string dataset;
  std::string bos_mode;
  std::string mode;
  double ppl = 0;
  std::size_t misses = 0;
  std::size_t predicted_tokens = 0;
  bool operator==(const PerplexityRow&) const = default;
};
struct RunReport {
  Provenance provenance;
  ojson config;  // effective config, echoed verbatim
  std::vector<PerplexityRow> results;
  ojson extra = ojson::object();
};
std::string render_run_report_json(const RunReport& report);
void write_run_report_json(const std::filesystem::path& path, const RunReport& report);
RunReport parse_run_report_json(std::string_view text);

}  // namespace malab
