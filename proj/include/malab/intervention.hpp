#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malab/model.hpp"
#include "malab/probe.hpp"

namespace malab {

struct MeanEntry {
  double mean = 0;
  std::size_t count = 0;
};

struct MeanTable {
  std::map<LocationKey, MeanEntry> entries;
  std::set<std::size_t> first_emergence_layers;
  std::string corpus_id;
  std::size_t n_samples = 0;  // samples actually processed
  bool bos = true;

  /// True when calibration saw no massive activations at all.
  bool no_massive_activations() const { return entries.empty(); }
  const MeanEntry* find(const LocationKey& key) const;
};

MeanTable mean_table_from(const LocationAggregate& agg, std::string corpus_id);

template <typename T>
MeanTable calibrate_means(const Model<T>& model,
                          std::span<const std::vector<std::int32_t>> samples,
                          std::size_t n_samples, bool bos, std::string corpus_id,
                          std::int32_t bos_id = 256);

enum class InterventionMode { none, set_to_zero, set_to_mean };

std::string_view to_string(InterventionMode mode);
InterventionMode parse_intervention_mode(std::string_view name);

/// Which snapshots to intervene on. Empty `target_layers` means the mean
/// table's first-emergence layers, or, without a table, the first flagged
/// snapshot of each sequence as it is computed.
struct InterventionSpec {
  InterventionMode mode = InterventionMode::none;
  std::vector<std::size_t> target_layers;
  const MeanTable* mean_table = nullptr;
  bool bos = true;  // BOS mode of the inputs being evaluated

  /// Throws ConfigError for set_to_mean without a table or with a table
  /// calibrated under the other BOS mode.
  void validate() const;
};

struct InterventionStats {
  std::size_t replaced = 0;
  std::size_t misses = 0;  // set_to_mean detections with no table entry

  InterventionStats& operator+=(const InterventionStats& o) {
    replaced += o.replaced;
    misses += o.misses;
    return *this;
  }
};

/// Snapshot hook performing the intervention. `stats` must outlive it.
template <typename T>
SnapshotHook<T> make_intervention_hook(const InterventionSpec& spec, InterventionStats* stats);

template <typename T>
ForwardResult<T> run_with_intervention(const Model<T>& model, const TokenBatch& tokens,
                                       const InterventionSpec& spec,
                                       InterventionStats* stats = nullptr,
                                       ForwardOptions<T> options = {});

struct EvalWindow {
  std::vector<std::int32_t> ids;
};

/// Non-overlapping windows of `context_len` over the stream. With `bos`
/// each window is BOS followed by context_len - 1 stream tokens. The tail
/// window is kept when it predicts at least one token.
std::vector<EvalWindow> perplexity_windows(std::span<const std::int32_t> stream,
                                           std::size_t context_len, bool bos,
                                           std::int32_t bos_id = 256);

struct PerplexityResult {
  double ppl = 0;
  double mean_nll = 0;
  double total_nll = 0;
  std::size_t predicted = 0;
  std::size_t windows = 0;
  InterventionStats stats;
};

/// Scores windows given a function that returns logits (rows x vocab,
/// row-major) for a batch of equal-length windows. BOS is never a target.
using LogitsFn = std::function<std::vector<double>(const TokenBatch&, InterventionStats&)>;

PerplexityResult perplexity_from(const std::vector<EvalWindow>& windows, std::size_t vocab,
                                 const LogitsFn& logits_fn, std::size_t batch_size = 8);

template <typename T>
PerplexityResult perplexity(const Model<T>& model, std::span<const std::int32_t> stream,
                            std::size_t context_len, bool bos, const InterventionSpec& spec,
                            std::size_t max_windows = 0, std::int32_t bos_id = 256);

}  // namespace malab
