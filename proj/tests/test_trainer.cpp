#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "malab/data.hpp"
#include "malab/kernels.hpp"
#include "malab/ops.hpp"
#include "malab/optimizer.hpp"
#include "malab/stats.hpp"
#include "malab/tokenizer.hpp"
#include "malab/trainer.hpp"
#include "support/oracles.hpp"

using namespace malab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("malab_test_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::string>& corpus() {
  static const auto docs = load_corpus(fs::path(MALAB_SOURCE_DIR) / "data/moby_dick_heldout.jsonl");
  return docs;
}

struct SmallRun {
  Model<float> model;
  TrainData data;
  TrainConfig config;
};

SmallRun small_run(std::size_t total_tokens, std::uint64_t seed = 3) {
  auto c = testing::tiny_config();
  c.hidden_size = 32;
  c.n_heads = 2;
  c.intermediate_size = 88;
  c.max_positions = 64;
  SmallRun r{build_model<float>(c, InitScheme::preset(c, seed)), {}, {}};
  r.config.context_len = 64;
  r.config.batch_size = 4;
  r.config.warmup_tokens = 2048;
  r.config.total_tokens = total_tokens;
  r.config.eval_every_tokens = 0;
  r.config.seed = seed;
  r.data.train = pack_sequences(corpus(), 64);
  return r;
}

std::vector<NamedParam<double>> scalar_param(double value, double grad) {
  Tensor<double> t(Shape{1, 1}, {value}, true);
  t.grad()[0] = grad;
  return {{"w", ParamRole::attn_q, 0, t}};
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("byte tokenizer") {
  CHECK(tokenize("A") == std::vector<std::int32_t>{65});
  CHECK(frame_document("hi") == std::vector<std::int32_t>{256, 'h', 'i', 257});
  CHECK(frame_document("hi", false) == std::vector<std::int32_t>{'h', 'i', 257});
  CHECK(frame_document("x", true, {true}).front() == 257);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s(trial * 3, '\0');
    for (auto& ch : s) ch = static_cast<char>(std::uniform_int_distribution<int>(0, 255)(rng));
    CHECK(detokenize(tokenize(s)) == s);
  }
  const std::vector<std::int32_t> with_special{104, 257, 105};
  CHECK(detokenize(with_special) == "hi");
  CHECK_THROWS_AS(detokenize(with_special, true), InputError);
  CHECK(is_special(258));
  CHECK_FALSE(is_special(255));
}

TEST_CASE("packing a single short document") {
  const std::vector<std::string> docs{"abcde"};
  auto w = pack_sequences(docs, 8);
  REQUIRE(w.size() == 1);
  CHECK(w[0].inputs == std::vector<std::int32_t>{256, 'a', 'b', 'c', 'd', 'e', 257, 258});
  CHECK(w[0].targets == std::vector<std::int32_t>{'a', 'b', 'c', 'd', 'e', 257, -1, -1});
  CHECK(w[0].unmasked() == 6);
  CHECK_THROWS_AS(pack_sequences(docs, 1), ConfigError);
}

TEST_CASE("packing keeps one BOS per document and masks one target per window") {
  const std::vector<std::string> docs{"Call me Ishmael.", "Some years ago", "x"};
  for (std::size_t ctx : {2, 5, 8, 13, 64}) {
    auto w = pack_sequences(docs, ctx);
    std::size_t bos = 0, real = 0, unmasked = 0;
    std::vector<std::int32_t> stream;
    for (const auto& win : w) {
      CHECK(win.inputs.size() == ctx);
      CHECK(win.targets.size() == ctx);
      std::size_t r = 0;
      for (auto id : win.inputs) {
        bos += id == kBos;
        r += id != kPad;
        if (id != kPad) stream.push_back(id);
      }
      real += r;
      unmasked += win.unmasked();
      CHECK(win.unmasked() == r - 1);
      for (std::size_t t = 0; t + 1 < ctx; ++t) {
        if (win.targets[t] != ops::kIgnore) CHECK(win.targets[t] == win.inputs[t + 1]);
      }
      CHECK(win.targets.back() == ops::kIgnore);
    }
    CHECK(bos == docs.size());
    CHECK(unmasked == real - w.size());
    CHECK(stream.front() == kBos);
    for (std::size_t i = 1; i < stream.size(); ++i) {
      if (stream[i] == kBos) CHECK(stream[i - 1] == kEos);
    }
  }
}

TEST_CASE("evaluation stream and chunks") {
  const std::vector<std::string> docs{"ab", "c"};
  CHECK(evaluation_stream(docs) == std::vector<std::int32_t>{'a', 'b', 257, 'c', 257});
  const std::vector<std::int32_t> s{1, 2, 3, 4, 5};
  auto c = chunk_stream(s, 2);
  REQUIRE(c.size() == 3);
  CHECK(c[2] == std::vector<std::int32_t>{5});
  CHECK(chunk_stream(s, 2, 1).size() == 1);
}

TEST_CASE("corpus loading") {
  auto dir = scratch("corpus");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "a.jsonl") << "{\"text\": \"one\"}\n\n{\"text\": \"two\", \"id\": 3}\n";
    std::ofstream(dir / "b.txt") << "first line\n\nsecond\n";
    std::ofstream(dir / "bad.jsonl") << "{\"text\": \"ok\"}\n{\"body\": \"no\"}\n";
  }
  CHECK(load_corpus(dir / "a.jsonl") == std::vector<std::string>{"one", "two"});
  CHECK(load_corpus(dir / "b.txt") == std::vector<std::string>{"first line", "second"});
  CHECK_THROWS_WITH_AS(load_corpus(dir / "bad.jsonl"), doctest::Contains(":2"), FormatError);
  CHECK_THROWS_AS(load_corpus(dir / "missing.txt"), InputError);
  fs::remove_all(dir);
}

TEST_CASE("batch sampler is a deterministic epoch shuffle addressable by cursor") {
  const std::vector<std::string> docs{std::string(300, 'a') + std::string(300, 'b')};
  auto windows = pack_sequences(docs, 16);
  const std::size_t n = windows.size();
  BatchSampler a(&windows, 4, 9), b(&windows, 4, 9);
  std::vector<std::vector<std::int32_t>> seen;
  for (int i = 0; i < 30; ++i) {
    auto x = a.next(), y = b.next();
    CHECK(x.tokens.ids == y.tokens.ids);
    CHECK(x.targets == y.targets);
    CHECK(x.tokens.batch == 4);
    CHECK(x.tokens.seq_len == 16);
    seen.push_back(x.tokens.ids);
  }
  CHECK(a.cursor() == 120);
  BatchSampler c(&windows, 4, 9, 40);
  CHECK(c.next().tokens.ids == seen[10]);

  // First epoch visits every window once.
  BatchSampler d(&windows, 1, 5);
  std::multiset<std::vector<std::int32_t>> epoch, all;
  for (const auto& w : windows) all.insert(w.inputs);
  for (std::size_t i = 0; i < n; ++i) epoch.insert(d.next().tokens.ids);
  CHECK(epoch == all);
}

TEST_CASE("adamw closed forms") {
  AdamWConfig cfg{0.9, 0.95, 1e-7, 0.0};
  {
    auto p = scalar_param(0.5, 0.0);
    AdamWState<double> st;
    adamw_step(p, st, 1e-3, cfg);
    CHECK(p[0].tensor[0] == 0.5);
  }
  {
    auto p = scalar_param(0.5, 1.0);
    AdamWState<double> st;
    adamw_step(p, st, 1e-3, cfg);
    const double m_hat = (0.1 * 1.0) / (1 - 0.9), v_hat = (0.05 * 1.0) / (1 - 0.95);
    CHECK(p[0].tensor[0] == doctest::Approx(0.5 - 1e-3 * m_hat / (std::sqrt(v_hat) + 1e-7)).epsilon(1e-12));
    CHECK(st.step == 1);
  }
  {
    auto p = scalar_param(0.5, 0.0);
    AdamWState<double> st;
    adamw_step(p, st, 1e-3, AdamWConfig{0.9, 0.95, 1e-7, 0.1});
    CHECK(p[0].tensor[0] == doctest::Approx(0.5 * (1 - 1e-4)).epsilon(1e-15));
  }
}

TEST_CASE("adamw refuses non-finite gradients before touching anything") {
  auto m = testing::tiny_model(testing::tiny_config());
  auto params = m.parameters();
  for (auto& p : params) p.tensor.grad()[0] = 0.01f;
  params[5].tensor.grad()[1] = std::nanf("");
  auto before = clone_model(m);
  AdamWState<float> st;
  CHECK_THROWS_WITH_AS(adamw_step(params, st, 1e-3, AdamWConfig{}),
                       doctest::Contains(params[5].name.c_str()), NumericError);
  auto pb = before.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(std::equal(params[i].tensor.data().begin(), params[i].tensor.data().end(),
                     pb[i].tensor.data().begin()));
  }
  CHECK(st.step == 0);
}

TEST_CASE("decay applies to exactly the rank-2 weights") {
  auto m = testing::tiny_model(
      testing::tiny_config(ModelFamily::gpt2_style, AttentionKind::kv_bias, NormKind::dyt));
  for (const auto& p : m.parameters()) {
    const bool vector_like = p.role == ParamRole::norm_gamma || p.role == ParamRole::norm_beta ||
                             p.role == ParamRole::dyt_alpha || p.role == ParamRole::embed_scaler;
    CHECK(is_decayed(p) == !vector_like);
    CHECK(is_decayed(p) == (p.tensor.rank() == 2));
  }
}

TEST_CASE("learning rate schedule") {
  ScheduleConfig s{6e-4, 6e-5, 1000, 11000};
  CHECK(lr_at(0, s) == 0);
  CHECK(lr_at(500, s) == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(lr_at(1000, s) == doctest::Approx(6e-4).epsilon(1e-12));
  CHECK(lr_at(11000, s) == doctest::Approx(6e-5).epsilon(1e-12));
  CHECK(lr_at(6000, s) == doctest::Approx(6e-5 + (6e-4 - 6e-5) / 2).epsilon(1e-12));
  CHECK(std::abs(lr_at(1000 - 1e-6, s) - lr_at(1000 + 1e-6, s)) < 1e-12);
  for (double t = 0; t <= 11000; t += 250) {
    CHECK(lr_at(t, s) <= 6e-4 + 1e-18);
    if (t >= 1000) CHECK(lr_at(t, s) >= 6e-5 - 1e-18);
  }
}

TEST_CASE("global norm clipping") {
  auto make = [](std::vector<double> g) {
    Tensor<double> t(Shape{g.size()}, 0.0, true);
    std::copy(g.begin(), g.end(), t.grad().begin());
    return std::vector<NamedParam<double>>{{"g", ParamRole::norm_gamma, 0, t}};
  };
  auto small = make({0.3, 0.4});
  auto r = clip_global_norm(small, 1.0);
  CHECK(r.norm == doctest::Approx(0.5));
  CHECK(r.scale == 1.0);
  CHECK(small[0].tensor.grad()[0] == 0.3);
  auto big = make({0, 4.0 * 0.6, 4.0 * 0.8});
  r = clip_global_norm(big, 1.0);
  CHECK(r.norm == doctest::Approx(4.0));
  CHECK(r.scale == doctest::Approx(0.25));
  CHECK(std::abs(global_grad_norm(big) - 1.0) < 1e-6);
  CHECK(big[0].tensor.grad()[1] / big[0].tensor.grad()[2] == doctest::Approx(0.75));
}

TEST_CASE("train config invariants") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.end_lr = c.peak_lr;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.warmup_tokens = c.total_tokens;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.tvr = TVRConfig{0.0, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  CHECK(c.total_steps() == 2097152 / (8 * 256));
}

TEST_CASE("smoke training lowers the loss") {
  auto r = small_run(200 * 1024);
  r.data.heldout_stream = evaluation_stream(std::span(corpus()).first(3));
  r.data.probe_tokens = tokenize("Summer is warm. Winter is cold");
  r.config.eval_every_tokens = 100 * 1024;
  r.config.eval_windows = 2;
  const auto dir = scratch("smoke");
  TrainIO io;
  io.run_dir = dir;
  AdamWState<float> opt;
  auto res = train(r.model, r.data, r.config, io, opt);
  REQUIRE(res.log.size() == r.config.total_steps());
  double tail = 0;
  for (std::size_t i = res.log.size() - 10; i < res.log.size(); ++i) tail += res.log[i].loss / 10;
  CHECK(tail < res.log.front().loss);
  CHECK(fs::exists(dir / "final.ckpt"));
  CHECK(fs::exists(dir / "probes/step_0000400_profile.csv"));
  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) {
    auto j = ojson::parse(line);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"step", "tokens", "loss", "lr", "grad_norm", "clip_scale"});
    ++lines;
  }
  CHECK(lines == res.log.size());
  fs::remove_all(dir);
}

TEST_CASE("same seed gives bit-identical logs in reference mode") {
  const int keep = kernels::max_threads();
  kernels::set_threads(1);
  auto a = small_run(40 * 256, 7), b = small_run(40 * 256, 7);
  AdamWState<float> oa, ob;
  auto ra = train(a.model, a.data, a.config, {}, oa);
  auto rb = train(b.model, b.data, b.config, {}, ob);
  kernels::set_threads(keep);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].loss == rb.log[i].loss);
    CHECK(ra.log[i].grad_norm == rb.log[i].grad_norm);
  }
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
  const auto dir = scratch("resume");
  auto full = small_run(30 * 256, 4);
  AdamWState<float> of;
  auto whole = train(full.model, full.data, full.config, {}, of);

  auto part = small_run(30 * 256, 4);
  AdamWState<float> op;
  TrainIO io;
  io.run_dir = dir;
  io.max_steps = 12;
  auto first = train(part.model, part.data, part.config, io, op);
  REQUIRE(first.checkpoint == dir / "step_0000012.ckpt");
  auto ck = load_checkpoint(first.checkpoint);
  REQUIRE(ck.optimizer);
  io.max_steps = 0;
  auto rest = train(ck.model, part.data, part.config, io, *ck.optimizer,
                    TrainState::from_json(ck.trainer_state));
  REQUIRE(rest.log.size() == 18);
  for (std::size_t i = 0; i < rest.log.size(); ++i) {
    CHECK(std::abs(rest.log[i].loss - whole.log[12 + i].loss) < 1e-5);
  }
  fs::remove_all(dir);
}

TEST_CASE("tvr every step pins in-scope weight spread") {
  for (double target : {0.01, 0.02}) {
    auto r = small_run(100 * 256, 5);
    r.config.tvr = TVRConfig{target, 1};
    AdamWState<float> opt;
    TrainIO io;
    std::size_t checked = 0;
    io.on_step = [&](const StepRecord&) {
      for (const auto& p : r.model.parameters()) {
        if (!is_decoder_projection(p.role)) continue;
        CHECK(std::abs(population_std<float>(p.tensor.data()) - target) / target < 1e-5);
        ++checked;
      }
    };
    train(r.model, r.data, r.config, io, opt);
    CHECK(checked == 100 * 7 * 2);
  }
}

TEST_CASE("non-finite loss checkpoints and halts") {
  const auto dir = scratch("halt");
  auto r = small_run(10 * 256);
  r.model.lm_head[0] = std::numeric_limits<float>::infinity();
  r.model.lm_head[1] = -std::numeric_limits<float>::infinity();
  TrainIO io;
  io.run_dir = dir;
  AdamWState<float> opt;
  auto res = train(r.model, r.data, r.config, io, opt);
  CHECK(res.halted);
  CHECK(fs::exists(dir / "halt.ckpt"));
  auto diag = ojson::parse(std::ifstream(dir / "halt.json"));
  CHECK(diag["reason"] == "non-finite loss");
  CHECK_FALSE(fs::exists(dir / "final.ckpt"));
  fs::remove_all(dir);
}

}
