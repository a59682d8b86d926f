#include "malab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <spdlog/spdlog.h>

#include "malab/intervention.hpp"
#include "malab/ops.hpp"
#include "malab/probe.hpp"

namespace malab {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
  if (!(peak_lr > 0)) fail("peak_lr must be positive");
  if (!(end_lr >= 0 && end_lr < peak_lr)) fail("end_lr must be below peak_lr");
  if (total_tokens == 0) fail("total_tokens must be positive");
  if (warmup_tokens >= total_tokens) fail("warmup_tokens must be below total_tokens");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(grad_clip_norm > 0)) fail("grad_clip_norm must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (context_len < 2) fail("context_len must be >= 2");
  if (tvr) tvr->validate();
}

std::size_t TrainConfig::total_steps() const {
  return (total_tokens + tokens_per_step() - 1) / tokens_per_step();
}

ScheduleConfig TrainConfig::schedule() const {
  return {peak_lr, end_lr, static_cast<double>(warmup_tokens), static_cast<double>(total_tokens)};
}

ojson to_json(const StepRecord& r) {
  ojson j;
  j["step"] = r.step;
  j["tokens"] = r.tokens;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["grad_norm"] = r.grad_norm;
  j["clip_scale"] = r.clip_scale;
  return j;
}

ojson TrainState::to_json() const {
  return ojson{{"step", step}, {"tokens_seen", tokens_seen}, {"data_cursor", data_cursor}};
}

TrainState TrainState::from_json(const ojson& j) {
  TrainState s;
  s.step = j.at("step").get<std::size_t>();
  s.tokens_seen = j.at("tokens_seen").get<std::size_t>();
  s.data_cursor = j.at("data_cursor").get<std::size_t>();
  return s;
}

double batch_loss(const Model<float>& model, const TrainBatch& batch) {
  NoGradGuard no_grad;
  auto res = forward(model, batch.tokens);
  return ops::cross_entropy(res.logits, std::span<const std::int32_t>(batch.targets)).item();
}

namespace {

class LineLog {
 public:
  LineLog() = default;
  explicit LineLog(const std::filesystem::path& path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw InputError("cannot open " + path.string());
  }
  void write(const ojson& j) {
    if (!out_.is_open()) return;
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string step_tag(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07zu", step);
  return buf;
}

void evaluate(const Model<float>& model, const TrainData& data, const TrainConfig& config,
              const TrainIO& io, std::size_t step, std::size_t tokens, LineLog& eval_log) {
  ojson rec{{"step", step}, {"tokens", tokens}};
  const TokenizerOptions tok{config.alias_bos_eos};
  if (!data.heldout_stream.empty()) {
    InterventionSpec none;
    auto ppl = perplexity(model, std::span<const std::int32_t>(data.heldout_stream),
                          config.context_len, true, none, config.eval_windows, tok.bos_id());
    rec["heldout_ppl"] = ppl.ppl;
    rec["heldout_tokens"] = ppl.predicted;
  }
  if (!data.probe_tokens.empty()) {
    NoGradGuard no_grad;
    auto ids = prepare_sample(data.probe_tokens, true, model.config.max_positions, tok.bos_id());
    auto res = forward(model, TokenBatch::single(ids));
    auto report = detect(res.trace);
    auto prof = profile(res.trace);
    rec["flagged_layers"] = report.flagged_layers();
    rec["top1_per_layer"] = ojson::array();
    for (const auto& p : prof) rec["top1_per_layer"].push_back(p.top1);
    if (!io.run_dir.empty()) {
      Provenance prov = io.provenance;
      prov.bos_mode = "on";
      const auto dir = io.run_dir / "probes";
      write_profile_csv(dir / (step_tag(step) + "_profile.csv"), {prov, prof});
      write_locations_json(dir / (step_tag(step) + "_locations.json"),
                           {prov, report.layers, report.locations});
    }
  }
  eval_log.write(rec);
  spdlog::info("eval step {} tokens {}: {}", step, tokens, rec.dump());
}

}  // namespace

TrainResult train(Model<float>& model, const TrainData& data, const TrainConfig& config,
                  const TrainIO& io, AdamWState<float>& optimizer, TrainState state) {
  config.validate();
  if (model.config.max_positions < config.context_len) {
    throw ConfigError("train config: context_len exceeds the model's max_positions");
  }
  const auto start = std::chrono::steady_clock::now();
  const bool files = !io.run_dir.empty();
  if (files) std::filesystem::create_directories(io.run_dir);
  const bool resuming = state.step > 0;
  LineLog metrics = files ? LineLog(io.run_dir / "metrics.jsonl", resuming) : LineLog();
  LineLog eval_log = files ? LineLog(io.run_dir / "eval.jsonl", resuming) : LineLog();

  BatchSampler sampler(&data.train, config.batch_size, config.seed, state.data_cursor);
  const auto params = model.parameters();
  const auto sched = config.schedule();
  const auto adamw = config.adamw();
  const std::size_t per_step = config.tokens_per_step();
  const std::size_t total_steps = config.total_steps();

  TrainResult result;
  auto save = [&](const std::string& name) {
    if (!files) return;
    result.checkpoint = io.run_dir / name;
    ojson meta = io.checkpoint_metadata.is_object() ? io.checkpoint_metadata : ojson::object();
    meta["provenance"] = io.provenance.to_json();
    save_checkpoint(result.checkpoint, model, &optimizer, state.to_json(), meta);
  };
  auto halt = [&](const std::string& reason, const StepRecord& rec) {
    result.halted = true;
    result.halt_reason = reason;
    spdlog::error("halting at step {}: {}", rec.step, reason);
    save("halt.ckpt");
    if (files) {
      ojson diag{{"reason", reason}, {"record", to_json(rec)}, {"state", state.to_json()}};
      write_file_atomic(io.run_dir / "halt.json", diag.dump(2) + "\n");
    }
  };

  std::size_t steps_this_call = 0;
  while (state.step < total_steps) {
    if (io.max_steps && steps_this_call == io.max_steps) break;
    auto batch = sampler.next();
    StepRecord rec;
    rec.step = state.step + 1;
    rec.tokens = state.tokens_seen + per_step;
    rec.lr = lr_at(static_cast<double>(std::min(rec.tokens, config.total_tokens)), sched);

    auto res = forward(model, batch.tokens);
    auto loss = ops::cross_entropy(res.logits, std::span<const std::int32_t>(batch.targets));
    rec.loss = loss.item();
    if (!std::isfinite(rec.loss)) {
      halt("non-finite loss", rec);
      break;
    }
    loss.backward();
    res = {};
    loss = {};
    const auto clip = clip_global_norm(params, config.grad_clip_norm);
    rec.grad_norm = clip.norm;
    rec.clip_scale = clip.scale;
    try {
      adamw_step(params, optimizer, rec.lr, adamw);
    } catch (const NumericError& e) {
      zero_grads(params);
      halt(e.what(), rec);
      break;
    }
    zero_grads(params);
    if (config.tvr) tvr_training_hook(model, *config.tvr, rec.step);

    state.step = rec.step;
    state.tokens_seen = rec.tokens;
    state.data_cursor = sampler.cursor();
    ++steps_this_call;
    result.log.push_back(rec);
    metrics.write(to_json(rec));
    if (io.on_step) io.on_step(rec);
    if (rec.step % 50 == 0 || rec.step == 1) {
      spdlog::info("step {}/{} tokens {} loss {:.4f} lr {:.3e} gnorm {:.3f}", rec.step,
                   total_steps, rec.tokens, rec.loss, rec.lr, rec.grad_norm);
    }
    const std::size_t prev = rec.tokens - per_step;
    auto crossed = [&](std::size_t every) {
      return every && (rec.tokens / every != prev / every);
    };
    if (crossed(config.eval_every_tokens) || (config.eval_every_tokens && rec.step == total_steps)) {
      evaluate(model, data, config, io, rec.step, rec.tokens, eval_log);
    }
    if (crossed(config.checkpoint_every_tokens) && rec.step != total_steps) {
      save(step_tag(rec.step) + ".ckpt");
    }
  }
  result.state = state;
  if (!result.halted) save(state.step == total_steps ? "final.ckpt" : step_tag(state.step) + ".ckpt");
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace malab
