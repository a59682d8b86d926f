#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "malab/model.hpp"

namespace malab {

inline constexpr double kMassiveAbsThreshold = 100.0;
inline constexpr double kMassiveRatio = 1000.0;

/// max_abs > 100 and max_abs >= 1000 * median_abs.
bool is_massive(double max_abs, double median_abs);

/// Membership of a single element inside a flagged layer. Elements must
/// clear both the ratio and the absolute threshold, so a zero median never
/// turns ordinary values into locations.
bool is_massive_element(double abs_value, double median_abs);

struct ActivationLocation {
  std::size_t layer = 0;      // snapshot index 0..L
  std::size_t token_pos = 0;  // position inside its sequence
  std::size_t feat_dim = 0;
  double value = 0;
  std::size_t sequence = 0;   // batch row the token came from

  bool operator==(const ActivationLocation&) const = default;
};

struct LayerDetection {
  std::size_t layer = 0;
  bool flagged = false;
  double max_abs = 0;
  double median_abs = 0;
};

struct MassiveReport {
  std::vector<LayerDetection> layers;
  std::vector<ActivationLocation> locations;

  bool any() const;
  std::vector<std::size_t> flagged_layers() const;
  /// Lowest flagged snapshot index.
  std::optional<std::size_t> first_emergence() const;
};

/// Detection over one rows x width block. Locations are appended to `out`
/// when the block is flagged; token_pos is row % seq_len.
template <typename T>
LayerDetection detect_block(std::span<const T> values, std::size_t width, std::size_t seq_len,
                            std::size_t layer, std::size_t sequence_offset,
                            std::vector<ActivationLocation>* out);

/// Applies the criterion per snapshot over the whole flattened tensor.
template <typename T>
MassiveReport detect(const HiddenStateTrace<T>& trace);

struct LayerProfile {
  std::size_t layer = 0;
  double top1 = 0, top2 = 0, top3 = 0;
  double median = 0;

  bool operator==(const LayerProfile&) const = default;
};

/// Top-3 magnitudes and median magnitude. Throws DomainError for fewer than
/// three elements.
template <typename T>
LayerProfile profile_values(std::span<const T> values, std::size_t layer);

template <typename T>
std::vector<LayerProfile> profile(const HiddenStateTrace<T>& trace);

enum class Bucket { start, nonstart };

std::string_view to_string(Bucket b);
Bucket parse_bucket(std::string_view s);
inline Bucket bucket_of(std::size_t token_pos) {
  return token_pos == 0 ? Bucket::start : Bucket::nonstart;
}

struct LocationKey {
  std::size_t layer = 0;
  std::size_t feat_dim = 0;
  Bucket bucket = Bucket::start;

  auto operator<=>(const LocationKey&) const = default;
};

struct LocationStats {
  std::size_t count = 0;
  double sum = 0;

  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

/// Per-(layer, dim, bucket) sums and counts over a set of samples.
struct LocationAggregate {
  std::map<LocationKey, LocationStats> entries;
  std::set<std::size_t> first_emergence_layers;
  std::size_t n_requested = 0;
  std::size_t n_processed = 0;
  bool bos = true;

  void add(const MassiveReport& report);
};

/// Runs detect over up to n_samples token sequences. Each sample is raw
/// byte tokens; BOS is prepended when `bos` and the result is truncated to
/// the model context. Samples with no tokens are skipped.
template <typename T>
LocationAggregate aggregate_locations(const Model<T>& model,
                                      std::span<const std::vector<std::int32_t>> samples,
                                      std::size_t n_samples, bool bos,
                                      std::int32_t bos_id = 256);

/// The token sequence a sample becomes under the given BOS mode.
std::vector<std::int32_t> prepare_sample(std::span<const std::int32_t> sample, bool bos,
                                         std::size_t max_len, std::int32_t bos_id = 256);

}  // namespace malab
