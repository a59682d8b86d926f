#include "malab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "malab/stats.hpp"

namespace malab {

bool is_massive(double max_abs, double median_abs) {
  return max_abs > kMassiveAbsThreshold && max_abs >= kMassiveRatio * median_abs;
}

bool is_massive_element(double abs_value, double median_abs) {
  return abs_value > kMassiveAbsThreshold && abs_value >= kMassiveRatio * median_abs;
}

bool MassiveReport::any() const {
  return std::ranges::any_of(layers, [](const auto& l) { return l.flagged; });
}

std::vector<std::size_t> MassiveReport::flagged_layers() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) {
    if (l.flagged) out.push_back(l.layer);
  }
  return out;
}

std::optional<std::size_t> MassiveReport::first_emergence() const {
  for (const auto& l : layers) {
    if (l.flagged) return l.layer;
  }
  return std::nullopt;
}

template <typename T>
LayerDetection detect_block(std::span<const T> values, std::size_t width, std::size_t seq_len,
                            std::size_t layer, std::size_t sequence_offset,
                            std::vector<ActivationLocation>* out) {
  if (values.empty()) throw DomainError("detect: empty snapshot");
  if (width == 0 || values.size() % width != 0) {
    throw DimensionError("detect: snapshot of " + std::to_string(values.size()) +
                         " values is not a multiple of width " + std::to_string(width));
  }
  LayerDetection d;
  d.layer = layer;
  for (T v : values) d.max_abs = std::max(d.max_abs, std::fabs(static_cast<double>(v)));
  d.median_abs = median_abs<T>(values);
  d.flagged = is_massive(d.max_abs, d.median_abs);
  if (d.flagged && out) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = static_cast<double>(values[i]);
      if (!is_massive_element(std::fabs(v), d.median_abs)) continue;
      const std::size_t row = i / width;
      out->push_back({layer, row % seq_len, i % width, v, sequence_offset + row / seq_len});
    }
  }
  return d;
}

template <typename T>
MassiveReport detect(const HiddenStateTrace<T>& trace) {
  if (trace.snapshots.empty()) throw DomainError("detect: empty trace");
  MassiveReport r;
  for (std::size_t l = 0; l < trace.snapshots.size(); ++l) {
    const auto& s = trace.snapshots[l];
    if (!s.defined()) throw ContractError("detect: snapshot " + std::to_string(l) + " missing");
    r.layers.push_back(detect_block<T>(s.data(), s.cols(), trace.seq_len ? trace.seq_len : s.rows(),
                                       l, 0, &r.locations));
  }
  return r;
}

template <typename T>
LayerProfile profile_values(std::span<const T> values, std::size_t layer) {
  if (values.size() < 3) {
    throw DomainError("profile: snapshot needs at least 3 elements, got " +
                      std::to_string(values.size()));
  }
  std::vector<double> abs(values.size());
  std::ranges::transform(values, abs.begin(), [](T v) { return std::fabs(static_cast<double>(v)); });
  std::partial_sort(abs.begin(), abs.begin() + 3, abs.end(), std::greater<>());
  return {layer, abs[0], abs[1], abs[2], median_abs<T>(values)};
}

template <typename T>
std::vector<LayerProfile> profile(const HiddenStateTrace<T>& trace) {
  std::vector<LayerProfile> out;
  out.reserve(trace.snapshots.size());
  for (std::size_t l = 0; l < trace.snapshots.size(); ++l) {
    out.push_back(profile_values<T>(trace.snapshots[l].data(), l));
  }
  return out;
}

std::string_view to_string(Bucket b) { return b == Bucket::start ? "start" : "nonstart"; }

Bucket parse_bucket(std::string_view s) {
  if (s == "start") return Bucket::start;
  if (s == "nonstart") return Bucket::nonstart;
  throw FormatError("unknown bucket '" + std::string(s) + "'");
}

void LocationAggregate::add(const MassiveReport& report) {
  for (const auto& loc : report.locations) {
    auto& e = entries[{loc.layer, loc.feat_dim, bucket_of(loc.token_pos)}];
    ++e.count;
    e.sum += loc.value;
  }
  if (auto first = report.first_emergence()) first_emergence_layers.insert(*first);
}

std::vector<std::int32_t> prepare_sample(std::span<const std::int32_t> sample, bool bos,
                                         std::size_t max_len, std::int32_t bos_id) {
  std::vector<std::int32_t> ids;
  if (bos) ids.push_back(bos_id);
  for (std::int32_t id : sample) {
    if (ids.size() >= max_len) break;
    ids.push_back(id);
  }
  return ids;
}

template <typename T>
LocationAggregate aggregate_locations(const Model<T>& model,
                                      std::span<const std::vector<std::int32_t>> samples,
                                      std::size_t n_samples, bool bos, std::int32_t bos_id) {
  if (n_samples < 1) throw ConfigError("aggregate_locations: n_samples must be >= 1");
  LocationAggregate agg;
  agg.n_requested = n_samples;
  agg.bos = bos;
  NoGradGuard no_grad;
  for (const auto& raw : samples) {
    if (agg.n_processed == n_samples) break;
    if (raw.empty()) continue;
    auto ids = prepare_sample(raw, bos, model.config.max_positions, bos_id);
    auto result = forward(model, TokenBatch::single(ids));
    agg.add(detect(result.trace));
    ++agg.n_processed;
  }
  return agg;
}

#define MALAB_INSTANTIATE_PROBE(T)                                                            \
  template LayerDetection detect_block<T>(std::span<const T>, std::size_t, std::size_t,      \
                                          std::size_t, std::size_t,                          \
                                          std::vector<ActivationLocation>*);                 \
  template MassiveReport detect(const HiddenStateTrace<T>&);                                 \
  template LayerProfile profile_values<T>(std::span<const T>, std::size_t);                  \
  template std::vector<LayerProfile> profile(const HiddenStateTrace<T>&);                    \
  template LocationAggregate aggregate_locations(                                            \
      const Model<T>&, std::span<const std::vector<std::int32_t>>, std::size_t, bool, std::int32_t);

MALAB_INSTANTIATE_PROBE(float)
MALAB_INSTANTIATE_PROBE(double)

#undef MALAB_INSTANTIATE_PROBE

}  // namespace malab
