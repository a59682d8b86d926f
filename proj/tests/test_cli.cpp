#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "malab/cli.hpp"
#include "malab/kernels.hpp"
#include "malab/reports.hpp"
#include "malab/run_config.hpp"

using namespace malab;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "malab_test_cli";

std::vector<std::string> tiny_train_args(const fs::path& run_dir, const std::string& seed = "5") {
  return {"train", "--run-dir", run_dir.string(), "--threads", "1", "--seed", seed,
          "--attention", "kv_bias", "--model.hidden_size", "32", "--model.n_layers", "2",
          "--model.n_heads", "2", "--model.max_positions", "32", "--train.context_len", "32",
          "--train.batch_size", "2", "--train.total_tokens", "1280", "--train.warmup_tokens", "256",
          "--train.eval_windows", "2", "--data.train", "data/moby_dick_heldout.jsonl"};
}

// One trained checkpoint shared by the downstream subcommand tests.
const fs::path& trained() {
  static const fs::path ckpt = [] {
    fs::remove_all(kRoot);
    const auto dir = kRoot / "train";
    REQUIRE(run_cli(tiny_train_args(dir)) == 0);
    return dir / "final.ckpt";
  }();
  return ckpt;
}

std::string slurp(const fs::path& p) { return read_file(p); }

std::vector<std::string> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run config schema, overrides and derived fields") {
  auto rc = resolve_run_config(ojson::object());
  CHECK(rc.model.family == ModelFamily::llama_style);
  CHECK(rc.model.intermediate_size == 344);
  CHECK(rc.model.norm == NormKind::rms_norm);
  CHECK(rc.effective["model"]["intermediate_size"] == 344);

  auto gpt = resolve_run_config(ojson{{"model", {{"family", "gpt2_style"}}}});
  CHECK(gpt.model.intermediate_size == 512);
  CHECK(gpt.model.norm == NormKind::layer_norm);

  auto dyt = resolve_run_config(ojson{{"model", {{"norm", "dyt"}}}});
  CHECK(dyt.model.embed_scaler);
  CHECK_FALSE(rc.model.embed_scaler);

  auto tvr = resolve_run_config(ojson{{"tvr", {{"target_std", 0.02}}}});
  REQUIRE(tvr.train.tvr);
  CHECK(tvr.train.tvr->target_std == 0.02);
  CHECK(tvr.train.tvr->interval_steps == 100);
  CHECK_FALSE(rc.train.tvr);

  CHECK_THROWS_WITH_AS(resolve_run_config(ojson{{"model", {{"hiden_size", 3}}}}),
                       doctest::Contains("model.hiden_size"), ConfigError);
  CHECK_THROWS_WITH_AS(resolve_run_config(ojson{{"train", {{"batch_size", "eight"}}}}),
                       doctest::Contains("train.batch_size"), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(ojson{{"model", {{"hidden_size", 30}, {"n_heads", 4}}}}),
                  ConfigError);

  auto doc = default_run_config();
  apply_override(doc, "model.n_layers", "6");
  apply_override(doc, "model.tie_embeddings", "on");
  apply_override(doc, "train.peak_lr", "1e-3");
  CHECK(doc["model"]["n_layers"] == 6);
  CHECK(doc["model"]["tie_embeddings"] == true);
  CHECK(doc["train"]["peak_lr"] == 1e-3);
  CHECK_THROWS_AS(apply_override(doc, "model.n_layers", "-1"), ConfigError);
  CHECK_THROWS_WITH_AS(apply_override(doc, "model.colour", "red"), doctest::Contains("model.colour"),
                       ConfigError);
  apply_override(doc, "model.norm", "dyt");
  apply_override(doc, "model.norm", "auto");
  CHECK(doc["model"]["norm"].is_null());
}

TEST_CASE("exit codes for usage problems") {
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"frobnicate"}) == 1);
  CHECK(run_cli({"train", "--model.nonsense", "1"}) == 1);
  CHECK(run_cli({"train", "--run-dir", (kRoot / "badcfg").string(), "--model.hidden_size", "x"}) == 1);
  CHECK(run_cli({"train", "--run-dir", (kRoot / "missing").string(), "--config",
                 (kRoot / "nope.json").string()}) == 1);
  CHECK(run_cli({"probe"}) == 1);
  CHECK(run_cli({"probe", "--checkpoint", (kRoot / "absent.ckpt").string(), "--out",
                 kRoot.string()}) != 0);
  CHECK(run_cli({"probe", "--checkpoint", trained().string(), "--bos", "sometimes", "--out",
                 kRoot.string()}) == 1);
}

TEST_CASE("train writes config, metrics, checkpoint and report") {
  const auto dir = trained().parent_path();
  for (const char* f : {"config.json", "metrics.jsonl", "eval.jsonl", "final.ckpt", "run_report.json"}) {
    CHECK(fs::exists(dir / f));
  }
  auto cfg = ojson::parse(slurp(dir / "config.json"));
  CHECK(cfg["model"]["attention"] == "kv_bias");
  CHECK(cfg["seed"] == 5);
  auto report = parse_run_report_json(slurp(dir / "run_report.json"));
  CHECK(report.provenance.seed == 5);
  CHECK(report.provenance.config_hash == config_hash(cfg));
  const auto& t = report.extra["train"];
  CHECK(t["steps"] == 20);
  CHECK(t["tokens"] == 1280);
  CHECK(t["halted"] == false);
  CHECK(t["probe_top1_per_layer"].size() == 3);
  REQUIRE(report.results.size() == 1);
  CHECK(report.results[0].mode == "none");
}

TEST_CASE("probe writes a profile with one row per snapshot") {
  const auto dir = kRoot / "probe";
  REQUIRE(run_cli({"probe", "--checkpoint", trained().string(), "--run-dir", dir.string()}) == 0);
  auto prof = parse_profile_csv(slurp(dir / "profile.csv"));
  CHECK(prof.rows.size() == 3);
  CHECK(prof.provenance.bos_mode == "on");
  auto loc = parse_locations_json(slurp(dir / "locations.json"));
  CHECK(loc.layers.size() == 3);
}

TEST_CASE("calibrate, evaluate and intervene") {
  const auto ck = trained().string();
  const auto cal = kRoot / "calib_on";
  REQUIRE(run_cli({"calibrate-means", "--checkpoint", ck, "--run-dir", cal.string(), "--n-samples",
                   "4", "--data", "data/moby_dick_heldout.jsonl"}) == 0);
  Provenance p;
  auto table = parse_mean_table_json(slurp(cal / "mean_table.json"), &p);
  CHECK(table.n_samples == 4);
  CHECK(table.bos);
  CHECK(p.bos_mode == "on");

  const auto table_path = (cal / "mean_table.json").string();
  for (const char* mode : {"none", "set_to_zero", "set_to_mean"}) {
    const auto dir = kRoot / (std::string("eval_") + mode);
    REQUIRE(run_cli({"eval-ppl", "--checkpoint", ck, "--run-dir", dir.string(), "--mode", mode,
                     "--mean-table", table_path, "--max-windows", "2"}) == 0);
    auto r = parse_run_report_json(slurp(dir / "run_report.json"));
    REQUIRE(r.results.size() == 1);
    CHECK(r.results[0].bos_mode == "on");
    CHECK(r.results[0].predicted_tokens == 2 * 31);
  }
  CHECK(run_cli({"eval-ppl", "--checkpoint", ck, "--run-dir", (kRoot / "e_mismatch").string(),
                 "--mode", "set_to_mean", "--bos", "off", "--mean-table", table_path}) == 1);
  CHECK(run_cli({"eval-ppl", "--checkpoint", ck, "--run-dir", (kRoot / "e_notable").string(),
                 "--mode", "set_to_mean"}) == 1);
  CHECK(run_cli({"eval-ppl", "--checkpoint", ck, "--run-dir", (kRoot / "e_mode").string(),
                 "--mode", "halve"}) == 1);

  const auto grid = kRoot / "intervene";
  REQUIRE(run_cli({"intervene", "--checkpoint", ck, "--run-dir", grid.string(), "--n-samples", "3",
                   "--calib-data", "data/moby_dick_heldout.jsonl", "--max-windows", "2"}) == 0);
  auto r = parse_run_report_json(slurp(grid / "run_report.json"));
  REQUIRE(r.results.size() == 6);
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& row : r.results) {
    keys.insert({row.bos_mode, row.mode});
    CHECK(row.ppl >= 1.0);
    CHECK(row.dataset == r.results[0].dataset);
  }
  CHECK(keys.size() == 6);
  CHECK(fs::exists(grid / "mean_table_bos_on.json"));
  CHECK(fs::exists(grid / "mean_table_bos_off.json"));
  CHECK(r.extra["calibration"]["off"]["n_samples"] == 3);
}

TEST_CASE("attn-export on a kv-bias model adds a bias column") {
  const auto dir = kRoot / "attn";
  REQUIRE(run_cli({"attn-export", "--checkpoint", trained().string(), "--run-dir", dir.string(),
                   "--input", "abcde"}) == 0);
  for (int layer = 0; layer < 2; ++layer) {
    for (const char* q : {"logit", "prob"}) {
      const auto f = dir / "heatmaps" / ("layer_" + std::to_string(layer) + "_" + q + ".csv");
      auto h = parse_heatmap_csv(slurp(f));
      CHECK(h.has_bias_slot);
      CHECK(h.heatmap.rows == 6);
      CHECK(h.heatmap.cols == 7);
      CHECK(csv_rows(f)[0] == "k0,k1,k2,k3,k4,k5,bias");
    }
  }
  auto conc = parse_concentration_json(slurp(dir / "concentration.json"));
  REQUIRE(conc.layers.size() == 2);
  CHECK(conc.layers[0].bias_slot.has_value());
}

TEST_CASE("resume continues into the checkpoint's directory") {
  const auto dir = kRoot / "resumable";
  auto args = tiny_train_args(dir);
  args.insert(args.end(), {"--train.checkpoint_every_tokens", "640"});
  REQUIRE(run_cli(args) == 0);
  REQUIRE(fs::exists(dir / "step_0000010.ckpt"));
  const auto full = slurp(dir / "metrics.jsonl");

  const auto other = kRoot / "resumed";
  fs::create_directories(other);
  fs::copy_file(dir / "step_0000010.ckpt", other / "step_0000010.ckpt");
  {
    std::ifstream in(dir / "metrics.jsonl");
    std::ofstream out(other / "metrics.jsonl");
    std::string line;
    for (int i = 0; i < 10 && std::getline(in, line); ++i) out << line << "\n";
  }
  REQUIRE(run_cli({"train", "--resume", (other / "step_0000010.ckpt").string(), "--threads", "1"}) == 0);
  CHECK(fs::exists(other / "final.ckpt"));
  CHECK(slurp(other / "metrics.jsonl") == full);
  CHECK(run_cli({"train", "--resume", (other / "step_0000010.ckpt").string(), "--model.n_layers",
                 "3"}) == 1);
}

TEST_CASE("same seed reproduces metrics byte for byte") {
  const auto a = kRoot / "seed_a", b = kRoot / "seed_b";
  REQUIRE(run_cli(tiny_train_args(a, "7")) == 0);
  REQUIRE(run_cli(tiny_train_args(b, "7")) == 0);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  const auto c = kRoot / "seed_c";
  REQUIRE(run_cli(tiny_train_args(c, "8")) == 0);
  CHECK(slurp(a / "metrics.jsonl") != slurp(c / "metrics.jsonl"));
}

TEST_CASE("output root resolution") {
  const auto root = kRoot / "roots";
  REQUIRE(run_cli({"probe", "--checkpoint", trained().string(), "--out", root.string()}) == 0);
  REQUIRE(run_cli({"probe", "--checkpoint", trained().string(), "--out", root.string()}) == 0);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) dirs.push_back(e.path());
  REQUIRE(dirs.size() == 2);
  for (const auto& d : dirs) CHECK(fs::exists(d / "profile.csv"));
}

}
