#include "malab/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace malab {

const MeanEntry* MeanTable::find(const LocationKey& key) const {
  auto it = entries.find(key);
  return it == entries.end() ? nullptr : &it->second;
}

MeanTable mean_table_from(const LocationAggregate& agg, std::string corpus_id) {
  MeanTable t;
  for (const auto& [key, s] : agg.entries) t.entries[key] = {s.mean(), s.count};
  t.first_emergence_layers = agg.first_emergence_layers;
  t.corpus_id = std::move(corpus_id);
  t.n_samples = agg.n_processed;
  t.bos = agg.bos;
  return t;
}

template <typename T>
MeanTable calibrate_means(const Model<T>& model,
                          std::span<const std::vector<std::int32_t>> samples,
                          std::size_t n_samples, bool bos, std::string corpus_id,
                          std::int32_t bos_id) {
  auto agg = aggregate_locations(model, samples, n_samples, bos, bos_id);
  return mean_table_from(agg, std::move(corpus_id));
}

std::string_view to_string(InterventionMode mode) {
  switch (mode) {
    case InterventionMode::none: return "none";
    case InterventionMode::set_to_zero: return "set_to_zero";
    case InterventionMode::set_to_mean: return "set_to_mean";
  }
  return "?";
}

InterventionMode parse_intervention_mode(std::string_view name) {
  if (name == "none") return InterventionMode::none;
  if (name == "set_to_zero") return InterventionMode::set_to_zero;
  if (name == "set_to_mean") return InterventionMode::set_to_mean;
  throw ConfigError("unknown intervention mode '" + std::string(name) + "'");
}

void InterventionSpec::validate() const {
  if (mode != InterventionMode::set_to_mean) return;
  if (!mean_table) throw ConfigError("set_to_mean requires a mean table");
  if (mean_table->bos != bos) {
    throw ConfigError(std::string("mean table was calibrated with bos ") +
                      (mean_table->bos ? "on" : "off") + " but evaluation uses bos " +
                      (bos ? "on" : "off"));
  }
}

namespace {

struct HookState {
  std::vector<std::size_t> targets;  // empty: online first emergence
  bool online = false;
  std::size_t last_layer = 0;
  bool started = false;
  std::vector<bool> done;  // per sequence, online mode
};

}  // namespace

template <typename T>
SnapshotHook<T> make_intervention_hook(const InterventionSpec& spec, InterventionStats* stats) {
  spec.validate();
  auto state = std::make_shared<HookState>();
  state->targets = spec.target_layers;
  if (state->targets.empty() && spec.mean_table) {
    state->targets.assign(spec.mean_table->first_emergence_layers.begin(),
                          spec.mean_table->first_emergence_layers.end());
  }
  state->online = spec.target_layers.empty() && !spec.mean_table;
  const InterventionMode mode = spec.mode;
  const MeanTable* table = spec.mean_table;

  return [state, mode, table, stats](std::size_t layer, Tensor<T>& snapshot,
                                     const TokenBatch& tokens) {
    if (mode == InterventionMode::none) return;
    // A new forward pass starts whenever layers stop increasing.
    if (!state->started || layer <= state->last_layer) {
      state->done.assign(tokens.batch, false);
      state->started = true;
    }
    state->last_layer = layer;
    if (!state->online && std::ranges::find(state->targets, layer) == state->targets.end()) {
      return;
    }
    const std::size_t width = snapshot.cols(), seq = tokens.seq_len;
    auto data = snapshot.data();
    std::vector<ActivationLocation> locs;
    for (std::size_t b = 0; b < tokens.batch; ++b) {
      if (state->online && state->done[b]) continue;
      locs.clear();
      auto block = data.subspan(b * seq * width, seq * width);
      auto d = detect_block<T>(std::span<const T>(block.data(), block.size()), width, seq, layer,
                               b, &locs);
      if (!d.flagged) continue;
      state->done[b] = true;
      for (const auto& loc : locs) {
        T& cell = block[loc.token_pos * width + loc.feat_dim];
        if (mode == InterventionMode::set_to_zero) {
          cell = T(0);
          if (stats) ++stats->replaced;
          continue;
        }
        const MeanEntry* e = table->find({layer, loc.feat_dim, bucket_of(loc.token_pos)});
        if (!e) {
          if (stats) ++stats->misses;
          continue;
        }
        cell = static_cast<T>(e->mean);
        if (stats) ++stats->replaced;
      }
    }
  };
}

template <typename T>
ForwardResult<T> run_with_intervention(const Model<T>& model, const TokenBatch& tokens,
                                       const InterventionSpec& spec, InterventionStats* stats,
                                       ForwardOptions<T> options) {
  if (spec.mode != InterventionMode::none) {
    options.hooks.push_back(make_intervention_hook<T>(spec, stats));
  } else {
    spec.validate();
  }
  return forward(model, tokens, options);
}

std::vector<EvalWindow> perplexity_windows(std::span<const std::int32_t> stream,
                                           std::size_t context_len, bool bos,
                                           std::int32_t bos_id) {
  if (context_len < 2) throw ConfigError("perplexity: context_len must be >= 2");
  std::vector<EvalWindow> out;
  const std::size_t take = bos ? context_len - 1 : context_len;
  for (std::size_t start = 0; start < stream.size(); start += take) {
    const std::size_t n = std::min(take, stream.size() - start);
    EvalWindow w;
    if (bos) w.ids.push_back(bos_id);
    w.ids.insert(w.ids.end(), stream.begin() + static_cast<std::ptrdiff_t>(start),
                 stream.begin() + static_cast<std::ptrdiff_t>(start + n));
    if (w.ids.size() >= 2) out.push_back(std::move(w));
  }
  return out;
}

PerplexityResult perplexity_from(const std::vector<EvalWindow>& windows, std::size_t vocab,
                                 const LogitsFn& logits_fn, std::size_t batch_size) {
  if (windows.empty()) throw DomainError("perplexity: corpus yields no predictable tokens");
  if (batch_size == 0) batch_size = 1;
  PerplexityResult r;
  std::size_t i = 0;
  while (i < windows.size()) {
    // Group consecutive windows of equal length into one batch.
    const std::size_t len = windows[i].ids.size();
    std::size_t j = i;
    TokenBatch batch;
    batch.seq_len = len;
    batch.batch = 0;
    while (j < windows.size() && j - i < batch_size && windows[j].ids.size() == len) {
      batch.ids.insert(batch.ids.end(), windows[j].ids.begin(), windows[j].ids.end());
      ++batch.batch;
      ++j;
    }
    auto logits = logits_fn(batch, r.stats);
    if (logits.size() != batch.batch * len * vocab) {
      throw DimensionError("perplexity: logits function returned " +
                           std::to_string(logits.size()) + " values");
    }
    for (std::size_t b = 0; b < batch.batch; ++b) {
      for (std::size_t t = 0; t + 1 < len; ++t) {
        const double* row = logits.data() + (b * len + t) * vocab;
        const std::int32_t target = batch.ids[b * len + t + 1];
        double mx = row[0];
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
        double s = 0;
        for (std::size_t v = 0; v < vocab; ++v) s += std::exp(row[v] - mx);
        const double nll = mx + std::log(s) - row[target];
        if (!std::isfinite(nll)) throw NumericError("perplexity: non-finite token NLL");
        r.total_nll += nll;
        ++r.predicted;
      }
    }
    r.windows += batch.batch;
    i = j;
  }
  r.mean_nll = r.total_nll / static_cast<double>(r.predicted);
  r.ppl = std::exp(r.mean_nll);
  return r;
}

template <typename T>
PerplexityResult perplexity(const Model<T>& model, std::span<const std::int32_t> stream,
                            std::size_t context_len, bool bos, const InterventionSpec& spec,
                            std::size_t max_windows, std::int32_t bos_id) {
  if (stream.empty()) throw DomainError("perplexity: empty corpus");
  InterventionSpec eval_spec = spec;
  eval_spec.bos = bos;
  eval_spec.validate();
  auto windows = perplexity_windows(stream, context_len, bos, bos_id);
  if (max_windows && windows.size() > max_windows) windows.resize(max_windows);
  const std::size_t vocab = model.config.vocab_size;
  LogitsFn fn = [&](const TokenBatch& batch, InterventionStats& stats) {
    NoGradGuard no_grad;
    auto res = run_with_intervention(model, batch, eval_spec, &stats);
    auto d = res.logits.data();
    return std::vector<double>(d.begin(), d.end());
  };
  return perplexity_from(windows, vocab, fn);
}

#define MALAB_INSTANTIATE_INTERVENTION(T)                                                     \
  template MeanTable calibrate_means(const Model<T>&, std::span<const std::vector<std::int32_t>>, \
                                     std::size_t, bool, std::string, std::int32_t);         \
  template SnapshotHook<T> make_intervention_hook<T>(const InterventionSpec&,                \
                                                     InterventionStats*);                    \
  template ForwardResult<T> run_with_intervention(const Model<T>&, const TokenBatch&,        \
                                                  const InterventionSpec&, InterventionStats*, \
                                                  ForwardOptions<T>);                        \
  template PerplexityResult perplexity(const Model<T>&, std::span<const std::int32_t>,       \
                                       std::size_t, bool, const InterventionSpec&,           \
                                       std::size_t, std::int32_t);

MALAB_INSTANTIATE_INTERVENTION(float)
MALAB_INSTANTIATE_INTERVENTION(double)

#undef MALAB_INSTANTIATE_INTERVENTION

}  // namespace malab
