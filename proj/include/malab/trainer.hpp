#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "malab/checkpoint.hpp"
#include "malab/data.hpp"
#include "malab/init_variance.hpp"
#include "malab/optimizer.hpp"
#include "malab/reports.hpp"

namespace malab {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-7;
  double peak_lr = 6e-4;
  double end_lr = 6e-5;
  std::size_t warmup_tokens = 65536;
  std::size_t total_tokens = 2097152;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;
  std::size_t batch_size = 8;
  std::size_t context_len = 256;
  std::uint64_t seed = 0;
  std::optional<TVRConfig> tvr;
  std::size_t eval_every_tokens = 524288;  // 0 disables periodic evaluation
  std::size_t eval_windows = 16;           // held-out windows per evaluation
  std::size_t checkpoint_every_tokens = 0; // 0: final checkpoint only
  bool alias_bos_eos = false;

  void validate() const;
  std::size_t tokens_per_step() const { return batch_size * context_len; }
  std::size_t total_steps() const;
  AdamWConfig adamw() const { return {beta1, beta2, eps, weight_decay}; }
  ScheduleConfig schedule() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t tokens = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
  double clip_scale = 1;
};

ojson to_json(const StepRecord& r);

/// Position in the run; saved into checkpoints so training can resume.
struct TrainState {
  std::size_t step = 0;
  std::size_t tokens_seen = 0;
  std::size_t data_cursor = 0;

  ojson to_json() const;
  static TrainState from_json(const ojson& j);
};

struct TrainData {
  std::vector<PackedWindow> train;
  std::vector<std::int32_t> heldout_stream;  // bytes and EOS, no BOS
  std::vector<std::int32_t> probe_tokens;    // raw bytes; BOS is prepended
};

struct TrainIO {
  /// Where metrics.jsonl, eval.jsonl, probes/ and checkpoints go. Empty
  /// disables all file output.
  std::filesystem::path run_dir;
  /// Stop after this many optimizer steps in this call (0: run to the end).
  std::size_t max_steps = 0;
  Provenance provenance;
  /// Stored in every checkpoint header next to the provenance.
  ojson checkpoint_metadata = ojson::object();
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> log;
  TrainState state;
  bool halted = false;
  std::string halt_reason;
  double seconds = 0;
  std::filesystem::path checkpoint;
};

/// Trains `model` in place. `optimizer` and `state` carry a resumed run;
/// pass fresh values to start from scratch. A non-finite loss or gradient
/// saves a checkpoint, writes halt.json and returns with halted set.
TrainResult train(Model<float>& model, const TrainData& data, const TrainConfig& config,
                  const TrainIO& io, AdamWState<float>& optimizer, TrainState state = {});

/// Mean cross-entropy of one batch without updating anything.
double batch_loss(const Model<float>& model, const TrainBatch& batch);

}  // namespace malab
