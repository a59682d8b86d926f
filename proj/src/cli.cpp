#include "malab/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "malab/attention_analysis.hpp"
#include "malab/checkpoint.hpp"
#include "malab/data.hpp"
#include "malab/intervention.hpp"
#include "malab/kernels.hpp"
#include "malab/probe.hpp"
#include "malab/reports.hpp"
#include "malab/run_config.hpp"
#include "malab/trainer.hpp"

namespace fs = std::filesystem;

namespace malab {

namespace {

constexpr const char* kDefaultProbe = "Summer is warm. Winter is cold";

struct Common {
  std::string out;
  std::string run_dir;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--out", c.out, "output root (default: $MALAB_OUTPUT_ROOT or ./runs)");
  cmd->add_option("--run-dir", c.run_dir, "exact run directory to use");
  cmd->add_option("--threads", c.threads, "OpenMP threads (1: reference mode)");
}

std::string utc_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path make_run_dir(const Common& c, const std::string& hash) {
  if (!c.run_dir.empty()) {
    fs::create_directories(c.run_dir);
    return c.run_dir;
  }
  std::string root = c.out;
  if (root.empty()) {
    const char* env = std::getenv("MALAB_OUTPUT_ROOT");
    root = env && *env ? env : "runs";
  }
  const std::string base = utc_stamp() + "-" + hash.substr(0, 8);
  fs::path dir = fs::path(root) / base;
  for (int i = 1; fs::exists(dir); ++i) dir = fs::path(root) / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

bool parse_bos(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw ConfigError("--bos must be 'on' or 'off', got '" + s + "'");
}

std::string read_input(const std::string& input) {
  std::error_code ec;
  if (!input.empty() && fs::is_regular_file(input, ec)) return read_file(input);
  return input;
}

std::vector<std::size_t> parse_layers(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(part)));
    } catch (const std::exception&) {
      throw ConfigError("--layers: '" + part + "' is not a layer index");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// A checkpoint plus what analysis commands need from its metadata.
struct Loaded {
  Checkpoint ck;
  std::uint64_t seed = 0;
  TokenizerOptions tok;
};

Loaded load(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw InputError("checkpoint not found: " + path);
  Loaded l{load_checkpoint(path), 0, {}};
  const auto& meta = l.ck.metadata;
  if (meta.is_object()) {
    if (meta.contains("provenance")) l.seed = meta["provenance"].value("seed", std::uint64_t{0});
    if (meta.contains("run_config")) {
      l.tok.alias_bos_eos = meta["run_config"]["train"].value("alias_bos_eos", false);
    }
  }
  return l;
}

Provenance provenance_for(const ojson& effective, std::uint64_t seed, const std::string& bos) {
  Provenance p;
  p.config_hash = config_hash(effective);
  p.seed = seed;
  p.bos_mode = bos;
  return p;
}

void write_config(const fs::path& dir, const ojson& effective) {
  write_file_atomic(dir / "config.json", effective.dump(2) + "\n");
}

std::string dataset_name(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<std::int32_t> eval_stream_from(const std::string& path) {
  const auto docs = load_corpus(path);
  return evaluation_stream(docs);
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string config_path;
  std::string resume;
  std::vector<std::pair<std::string, std::string>> overrides;
};

int cmd_train(TrainArgs& a) {
  ojson doc = default_run_config();
  std::optional<Checkpoint> resumed;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw InputError("checkpoint not found: " + a.resume);
    resumed = load_checkpoint(a.resume);
    if (!resumed->metadata.is_object() || !resumed->metadata.contains("run_config")) {
      throw FormatError("checkpoint " + a.resume + " carries no run config to resume from");
    }
    doc = merge_run_config(doc, resumed->metadata["run_config"]);
  } else if (!a.config_path.empty()) {
    if (!fs::exists(a.config_path)) throw ConfigError("config " + a.config_path + " not found");
    ojson user;
    try {
      user = ojson::parse(read_file(a.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + a.config_path + ": " + e.what());
    }
    doc = merge_run_config(doc, user);
  }
  for (const auto& [path, value] : a.overrides) apply_override(doc, path, value);
  RunConfig rc = resolve_run_config(doc);
  const int threads = a.common.threads ? a.common.threads : rc.threads;
  if (threads > 0) kernels::set_threads(threads);

  const TokenizerOptions tok{rc.train.alias_bos_eos};
  TrainData data;
  const auto train_docs = load_corpus(rc.train_data);
  data.train = pack_sequences(train_docs, rc.train.context_len, tok);
  if (!rc.heldout_data.empty()) data.heldout_stream = eval_stream_from(rc.heldout_data);
  data.probe_tokens = tokenize(rc.probe_text);

  Model<float> model;
  AdamWState<float> optimizer;
  TrainState state;
  fs::path run_dir;
  const std::string hash = config_hash(rc.effective);
  if (resumed) {
    if (model_config_to_json(resumed->model.config) != model_config_to_json(rc.model)) {
      throw ConfigError("resume: overrides may not change the model architecture");
    }
    model = std::move(resumed->model);
    if (resumed->optimizer) optimizer = std::move(*resumed->optimizer);
    state = TrainState::from_json(resumed->trainer_state);
    run_dir = a.common.run_dir.empty() && a.common.out.empty() ? fs::path(a.resume).parent_path()
                                                                : make_run_dir(a.common, hash);
  } else {
    model = build_model<float>(rc.model, rc.init);
    run_dir = make_run_dir(a.common, hash);
  }
  write_config(run_dir, rc.effective);
  spdlog::info("run directory {}", run_dir.string());
  spdlog::info("{} parameters, {} training windows, {} steps", model.parameter_count(),
               data.train.size(), rc.train.total_steps());

  TrainIO io;
  io.run_dir = run_dir;
  io.provenance = provenance_for(rc.effective, rc.seed, "on");
  io.checkpoint_metadata = ojson{{"run_config", rc.effective}};
  const auto result = train(model, data, rc.train, io, optimizer, state);

  RunReport report;
  report.provenance = io.provenance;
  report.config = rc.effective;
  ojson summary;
  summary["steps"] = result.state.step;
  summary["tokens"] = result.state.tokens_seen;
  summary["seconds"] = result.seconds;
  summary["halted"] = result.halted;
  summary["halt_reason"] = result.halt_reason;
  summary["checkpoint"] = result.checkpoint.filename().string();
  summary["parameters"] = model.parameter_count();
  if (!result.log.empty()) {
    const std::size_t n = std::min<std::size_t>(20, result.log.size());
    double tail = 0;
    for (std::size_t i = result.log.size() - n; i < result.log.size(); ++i) tail += result.log[i].loss;
    summary["initial_loss"] = result.log.front().loss;
    summary["final_loss"] = tail / static_cast<double>(n);
    summary["final_loss_window"] = n;
  }
  if (!result.halted && !data.heldout_stream.empty()) {
    InterventionSpec none;
    const auto ppl = perplexity(model, std::span<const std::int32_t>(data.heldout_stream),
                                rc.train.context_len, true, none, 0, tok.bos_id());
    report.results.push_back({dataset_name(rc.heldout_data), "on", "none", ppl.ppl, 0,
                              ppl.predicted});
  }
  if (!data.probe_tokens.empty()) {
    NoGradGuard no_grad;
    auto ids = prepare_sample(data.probe_tokens, true, model.config.max_positions, tok.bos_id());
    const auto trace = forward(model, TokenBatch::single(ids)).trace;
    const auto det = detect(trace);
    summary["probe_flagged_layers"] = det.flagged_layers();
    ojson top1 = ojson::array();
    for (const auto& p : profile(trace)) top1.push_back(p.top1);
    summary["probe_top1_per_layer"] = top1;
  }
  report.extra = {{"train", summary}};
  write_run_report_json(run_dir / "run_report.json", report);
  std::cout << run_dir.string() << "\n";
  return result.halted ? 2 : 0;
}

// --- probe -----------------------------------------------------------------------

struct ProbeArgs {
  Common common;
  std::string checkpoint;
  std::string input = kDefaultProbe;
  std::string bos = "on";
};

int cmd_probe(const ProbeArgs& a) {
  const bool bos = parse_bos(a.bos);
  if (a.common.threads > 0) kernels::set_threads(a.common.threads);
  auto l = load(a.checkpoint);
  const std::string text = read_input(a.input);
  ojson eff{{"command", "probe"}, {"checkpoint", a.checkpoint}, {"input", a.input},
            {"bos", a.bos}, {"model", model_config_to_json(l.ck.model.config)}};
  const auto dir = make_run_dir(a.common, config_hash(eff));
  write_config(dir, eff);
  const auto ids = prepare_sample(tokenize(text), bos, l.ck.model.config.max_positions,
                                  l.tok.bos_id());
  if (ids.empty()) throw InputError("probe input is empty");
  NoGradGuard no_grad;
  const auto trace = forward(l.ck.model, TokenBatch::single(ids)).trace;
  const auto det = detect(trace);
  const auto prov = provenance_for(eff, l.seed, a.bos);
  write_profile_csv(dir / "profile.csv", {prov, profile(trace)});
  write_locations_json(dir / "locations.json", {prov, det.layers, det.locations});
  std::cout << dir.string() << "\n";
  return 0;
}

// --- calibrate-means -------------------------------------------------------------

struct CalibArgs {
  Common common;
  std::string checkpoint;
  std::string data = "data/moby_dick_train.jsonl";
  std::size_t n_samples = 100;
  std::string bos = "on";
  std::size_t sample_len = 0;  // 0: model context
};

std::vector<std::vector<std::int32_t>> calibration_samples(const std::string& path,
                                                           std::size_t n, std::size_t len,
                                                           bool bos) {
  const auto stream = eval_stream_from(path);
  return chunk_stream(stream, bos ? len - 1 : len, n);
}

MeanTable calibrate(const Loaded& l, const std::string& data, std::size_t n, std::size_t len,
                    bool bos) {
  const std::size_t ctx = len ? len : l.ck.model.config.max_positions;
  const auto samples = calibration_samples(data, n, ctx, bos);
  auto table = calibrate_means(l.ck.model, std::span<const std::vector<std::int32_t>>(samples), n,
                               bos, dataset_name(data), l.tok.bos_id());
  if (table.n_samples < n) {
    spdlog::warn("calibration corpus ran out after {} of {} samples", table.n_samples, n);
  }
  if (table.no_massive_activations()) spdlog::info("no massive activations found");
  return table;
}

int cmd_calibrate(const CalibArgs& a) {
  const bool bos = parse_bos(a.bos);
  if (a.common.threads > 0) kernels::set_threads(a.common.threads);
  auto l = load(a.checkpoint);
  ojson eff{{"command", "calibrate-means"}, {"checkpoint", a.checkpoint}, {"data", a.data},
            {"n_samples", a.n_samples}, {"bos", a.bos}, {"sample_len", a.sample_len}};
  const auto dir = make_run_dir(a.common, config_hash(eff));
  write_config(dir, eff);
  const auto table = calibrate(l, a.data, a.n_samples, a.sample_len, bos);
  write_mean_table_json(dir / "mean_table.json", table, provenance_for(eff, l.seed, a.bos));
  std::cout << dir.string() << "\n";
  return 0;
}

// --- eval-ppl / intervene ----------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string data = "data/moby_dick_heldout.jsonl";
  std::string mode = "none";
  std::string bos = "on";
  std::string mean_table;
  std::string layers;
  std::size_t context_len = 0;
  std::size_t max_windows = 0;
};

PerplexityRow eval_row(const Loaded& l, const std::vector<std::int32_t>& stream,
                       const std::string& dataset, InterventionMode mode, bool bos,
                       const MeanTable* table, const std::vector<std::size_t>& layers,
                       std::size_t context_len, std::size_t max_windows) {
  InterventionSpec spec;
  spec.mode = mode;
  spec.bos = bos;
  spec.mean_table = mode == InterventionMode::set_to_mean ? table : nullptr;
  spec.target_layers = layers;
  if (spec.target_layers.empty() && mode == InterventionMode::set_to_zero && table) {
    spec.target_layers.assign(table->first_emergence_layers.begin(),
                              table->first_emergence_layers.end());
    // A table that saw nothing leaves no targets; detection then finds
    // nothing either, matching set_to_mean on the same table.
    if (spec.target_layers.empty()) spec.mode = InterventionMode::none;
  }
  const std::size_t ctx = context_len ? context_len : l.ck.model.config.max_positions;
  const auto r = perplexity(l.ck.model, std::span<const std::int32_t>(stream), ctx, bos, spec,
                            max_windows, l.tok.bos_id());
  spdlog::info("{} bos={} mode={}: ppl {:.4f} over {} tokens, {} replaced, {} misses", dataset,
               bos_label(bos), to_string(mode), r.ppl, r.predicted, r.stats.replaced,
               r.stats.misses);
  return {dataset, bos_label(bos), std::string(to_string(mode)), r.ppl, r.stats.misses,
          r.predicted};
}

int cmd_eval(const EvalArgs& a) {
  const bool bos = parse_bos(a.bos);
  const auto mode = parse_intervention_mode(a.mode);
  if (a.common.threads > 0) kernels::set_threads(a.common.threads);
  auto l = load(a.checkpoint);
  std::optional<MeanTable> table;
  if (!a.mean_table.empty()) table = parse_mean_table_json(read_file(a.mean_table));
  if (mode == InterventionMode::set_to_mean) {
    if (!table) throw ConfigError("--mode set_to_mean requires --mean-table");
    if (table->bos != bos) {
      throw ConfigError("refusing to evaluate: mean table was calibrated with bos " +
                        bos_label(table->bos) + ", evaluation uses bos " + a.bos);
    }
  }
  ojson eff{{"command", "eval-ppl"}, {"checkpoint", a.checkpoint}, {"data", a.data},
            {"mode", a.mode}, {"bos", a.bos}, {"mean_table", a.mean_table},
            {"layers", a.layers}, {"context_len", a.context_len}, {"max_windows", a.max_windows}};
  const auto dir = make_run_dir(a.common, config_hash(eff));
  write_config(dir, eff);
  const auto stream = eval_stream_from(a.data);
  RunReport report;
  report.provenance = provenance_for(eff, l.seed, a.bos);
  report.config = eff;
  report.results.push_back(eval_row(l, stream, dataset_name(a.data), mode, bos,
                                    table ? &*table : nullptr, parse_layers(a.layers),
                                    a.context_len, a.max_windows));
  write_run_report_json(dir / "run_report.json", report);
  std::cout << dir.string() << "\n";
  return 0;
}

struct InterveneArgs {
  Common common;
  std::string checkpoint;
  std::string data = "data/moby_dick_heldout.jsonl";
  std::string calib_data = "data/moby_dick_train.jsonl";
  std::size_t n_samples = 100;
  std::string layers;
  std::size_t context_len = 0;
  std::size_t max_windows = 0;
};

int cmd_intervene(const InterveneArgs& a) {
  if (a.common.threads > 0) kernels::set_threads(a.common.threads);
  auto l = load(a.checkpoint);
  ojson eff{{"command", "intervene"}, {"checkpoint", a.checkpoint}, {"data", a.data},
            {"calib_data", a.calib_data}, {"n_samples", a.n_samples}, {"layers", a.layers},
            {"context_len", a.context_len}, {"max_windows", a.max_windows}};
  const auto dir = make_run_dir(a.common, config_hash(eff));
  write_config(dir, eff);
  const auto stream = eval_stream_from(a.data);
  const auto layers = parse_layers(a.layers);
  RunReport report;
  report.provenance = provenance_for(eff, l.seed, "n/a");
  report.config = eff;
  ojson calib = ojson::object();
  for (const bool bos : {true, false}) {
    const auto table = calibrate(l, a.calib_data, a.n_samples, a.context_len, bos);
    write_mean_table_json(dir / ("mean_table_bos_" + bos_label(bos) + ".json"), table,
                          provenance_for(eff, l.seed, bos_label(bos)));
    calib[bos_label(bos)] = {{"n_samples", table.n_samples},
                             {"entries", table.entries.size()},
                             {"first_emergence_layers", table.first_emergence_layers},
                             {"no_massive_activations", table.no_massive_activations()}};
    for (const auto mode : {InterventionMode::none, InterventionMode::set_to_zero,
                            InterventionMode::set_to_mean}) {
      report.results.push_back(eval_row(l, stream, dataset_name(a.data), mode, bos, &table,
                                        layers, a.context_len, a.max_windows));
    }
  }
  report.extra = {{"calibration", calib}};
  write_run_report_json(dir / "run_report.json", report);
  std::cout << dir.string() << "\n";
  return 0;
}

// --- attn-export -------------------------------------------------------------------

struct AttnArgs {
  Common common;
  std::string checkpoint;
  std::string input = kDefaultProbe;
  std::string bos = "on";
};

int cmd_attn(const AttnArgs& a) {
  const bool bos = parse_bos(a.bos);
  if (a.common.threads > 0) kernels::set_threads(a.common.threads);
  auto l = load(a.checkpoint);
  ojson eff{{"command", "attn-export"}, {"checkpoint", a.checkpoint}, {"input", a.input},
            {"bos", a.bos}, {"model", model_config_to_json(l.ck.model.config)}};
  const auto dir = make_run_dir(a.common, config_hash(eff));
  write_config(dir, eff);
  const auto ids = prepare_sample(tokenize(read_input(a.input)), bos,
                                  l.ck.model.config.max_positions, l.tok.bos_id());
  if (ids.empty()) throw InputError("attn-export input is empty");
  std::vector<AttentionLayerCapture> captures;
  ForwardOptions<float> opts;
  opts.attention = &captures;
  {
    NoGradGuard no_grad;
    forward(l.ck.model, TokenBatch::single(ids), opts);
  }
  const auto prov = provenance_for(eff, l.seed, a.bos);
  ConcentrationReport conc{prov, {}};
  for (std::size_t layer = 0; layer < captures.size(); ++layer) {
    const auto& cap = captures[layer];
    const bool has_bias = cap.heads.front().has_bias_slot;
    const std::string stem = "layer_" + std::to_string(layer);
    write_heatmap_csv(dir / "heatmaps" / (stem + "_logit.csv"),
                      {prov, layer, "logit", avg_logit_heatmap(cap), has_bias});
    write_heatmap_csv(dir / "heatmaps" / (stem + "_prob.csv"),
                      {prov, layer, "prob", avg_prob_heatmap(cap), has_bias});
    ConcentrationRow row{layer, concentration_on_first(cap), std::nullopt};
    if (has_bias) row.bias_slot = concentration_on_bias(cap);
    conc.layers.push_back(row);
  }
  write_concentration_json(dir / "concentration.json", conc);
  std::cout << dir.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Tiny-transformer lab for massive activations", "malab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kArtifactVersion));

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model from a run config");
  add_common(t, train.common);
  t->add_option("--config", train.config_path, "JSON run config");
  t->add_option("--resume", train.resume, "checkpoint to continue from");
  for (const auto& f : run_config_schema()) {
    if (f.path == "threads") continue;  // shared --threads
    const std::string path = f.path;
    t->add_option_function<std::string>(
        "--" + path, [&train, path](const std::string& v) { train.overrides.emplace_back(path, v); },
        f.help);
  }
  auto alias = [&](const std::string& flag, const std::string& path) {
    t->add_option_function<std::string>(
        flag, [&train, path](const std::string& v) { train.overrides.emplace_back(path, v); },
        "alias of --" + path);
  };
  alias("--attention", "model.attention");
  alias("--norm", "model.norm");
  alias("--family", "model.family");

  ProbeArgs probe;
  auto* p = app.add_subcommand("probe", "per-layer magnitude profile and massive activations");
  add_common(p, probe.common);
  p->add_option("--checkpoint", probe.checkpoint)->required();
  p->add_option("--input", probe.input, "text, or a file holding it")->capture_default_str();
  p->add_option("--bos", probe.bos, "on or off")->capture_default_str();

  CalibArgs calib;
  auto* c = app.add_subcommand("calibrate-means", "mean table for set_to_mean");
  add_common(c, calib.common);
  c->add_option("--checkpoint", calib.checkpoint)->required();
  c->add_option("--data", calib.data, "calibration corpus")->capture_default_str();
  c->add_option("--n-samples", calib.n_samples)->capture_default_str();
  c->add_option("--bos", calib.bos, "on or off")->capture_default_str();
  c->add_option("--sample-len", calib.sample_len, "tokens per sample (0: model context)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval-ppl", "perplexity under one intervention mode");
  add_common(e, eval.common);
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--data", eval.data, "evaluation corpus")->capture_default_str();
  e->add_option("--mode", eval.mode, "none, set_to_zero or set_to_mean")->capture_default_str();
  e->add_option("--bos", eval.bos, "on or off")->capture_default_str();
  e->add_option("--mean-table", eval.mean_table, "mean table JSON for set_to_mean");
  e->add_option("--layers", eval.layers, "comma-separated snapshot indices to intervene on");
  e->add_option("--context-len", eval.context_len, "window length (0: model context)");
  e->add_option("--max-windows", eval.max_windows, "evaluate at most this many windows");

  InterveneArgs inter;
  auto* i = app.add_subcommand("intervene", "3 modes x 2 BOS settings perplexity grid");
  add_common(i, inter.common);
  i->add_option("--checkpoint", inter.checkpoint)->required();
  i->add_option("--data", inter.data, "evaluation corpus")->capture_default_str();
  i->add_option("--calib-data", inter.calib_data, "calibration corpus")->capture_default_str();
  i->add_option("--n-samples", inter.n_samples)->capture_default_str();
  i->add_option("--layers", inter.layers, "comma-separated snapshot indices to intervene on");
  i->add_option("--context-len", inter.context_len, "window length (0: model context)");
  i->add_option("--max-windows", inter.max_windows, "evaluate at most this many windows");

  AttnArgs attn;
  auto* a = app.add_subcommand("attn-export", "head-averaged attention heatmaps");
  add_common(a, attn.common);
  a->add_option("--checkpoint", attn.checkpoint)->required();
  a->add_option("--input", attn.input, "text, or a file holding it")->capture_default_str();
  a->add_option("--bos", attn.bos, "on or off")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  spdlog::set_default_logger(spdlog::default_logger());
  try {
    if (t->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_probe(probe);
    if (c->parsed()) return cmd_calibrate(calib);
    if (e->parsed()) return cmd_eval(eval);
    if (i->parsed()) return cmd_intervene(inter);
    if (a->parsed()) return cmd_attn(attn);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace malab
