#include <cmath>
#include <random>

#include "doctest.h"
#include "malab/init_variance.hpp"
#include "malab/model.hpp"
#include "malab/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace malab;
using malab::testing::tiny_config;
using malab::testing::tiny_model;

namespace {

std::vector<std::int32_t> random_ids(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int32_t> u(0, static_cast<std::int32_t>(vocab) - 1);
  std::vector<std::int32_t> ids(n);
  for (auto& i : ids) i = u(rng);
  return ids;
}

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_SUITE("model_zoo") {

TEST_CASE("minimal config builds and runs") {
  ModelConfig c = ModelConfig::desk_reference(ModelFamily::llama_style);
  c.n_layers = 1;
  c.hidden_size = 8;
  c.n_heads = 2;
  c.vocab_size = 16;
  c.intermediate_size = 24;
  auto m = build_model<float>(c, InitScheme::preset(c, 3));
  const std::vector<std::int32_t> ids{1, 5, 15};
  auto r = forward(m, TokenBatch::single(ids));
  CHECK(r.logits.shape() == Shape{3, 16});
  for (float v : r.logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("same seed gives bit-identical parameters") {
  for (auto fam : {ModelFamily::gpt2_style, ModelFamily::llama_style}) {
    auto c = tiny_config(fam, AttentionKind::kv_bias);
    auto a = tiny_model(c, 5), b = tiny_model(c, 5), d = tiny_model(c, 6);
    auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].name == pb[i].name);
      CHECK(same_bits(pa[i].tensor, pb[i].tensor));
      any_diff = any_diff || !same_bits(pa[i].tensor, pd[i].tensor);
    }
    CHECK(any_diff);
  }
}

TEST_CASE("desk llama parameter count matches the closed form") {
  const auto c = ModelConfig::desk_reference(ModelFamily::llama_style);
  auto m = allocate_model<float>(c);
  const std::size_t V = 259, w = 128, I = 344, L = 4;
  const std::size_t per_layer = 4 * w * w + 3 * w * I + 2 * w;
  const std::size_t expect = V * w + L * per_layer + w + w * V;
  CHECK(expect == 857984);
  CHECK(m.parameter_count() == expect);

  auto g = allocate_model<float>(ModelConfig::desk_reference(ModelFamily::gpt2_style));
  const std::size_t gpt_layer = 4 * w * w + 2 * w * 512 + 4 * w;
  CHECK(g.parameter_count() == V * w + 256 * w + L * gpt_layer + 2 * w + w * V);

  auto k = ModelConfig::desk_reference(ModelFamily::llama_style);
  k.attention = AttentionKind::kv_bias;
  CHECK(allocate_model<float>(k).parameter_count() == expect + L * 2 * w);
}

TEST_CASE("config validation names the violated invariant") {
  auto c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("divisible"), ConfigError);
  c = tiny_config();
  c.hidden_size = 18;
  c.n_heads = 6;  // head_dim 3
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("even head_dim"), ConfigError);
  c = tiny_config();
  c.embed_scaler = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config(ModelFamily::llama_style, AttentionKind::standard, NormKind::dyt);
  c.dyt_alpha_final = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(build_model<float>(c, InitScheme{}), ConfigError);
}

TEST_CASE("single token shapes") {
  for (auto fam : {ModelFamily::gpt2_style, ModelFamily::llama_style}) {
    auto c = tiny_config(fam);
    auto m = tiny_model(c);
    const std::vector<std::int32_t> ids{42};
    auto r = forward(m, TokenBatch::single(ids));
    CHECK(r.logits.shape() == Shape{1, 259});
    REQUIRE(r.trace.snapshots.size() == c.n_layers + 1);
    for (const auto& s : r.trace.snapshots) CHECK(s.shape() == Shape{1, 16});
  }
}

TEST_CASE("bad tokens are input errors") {
  auto m = tiny_model(tiny_config());
  const std::vector<std::int32_t> bad{1, 259};
  CHECK_THROWS_AS(forward(m, TokenBatch::single(bad)), InputError);
  const std::vector<std::int32_t> neg{-1};
  CHECK_THROWS_AS(forward(m, TokenBatch::single(neg)), InputError);
  const std::vector<std::int32_t> long_seq(33, 1);
  CHECK_THROWS_AS(forward(m, TokenBatch::single(long_seq)), InputError);
}

TEST_CASE("snapshots reconstruct from residual contributions") {
  std::mt19937_64 rng(1);
  for (auto fam : {ModelFamily::gpt2_style, ModelFamily::llama_style}) {
    for (auto att : {AttentionKind::standard, AttentionKind::kv_bias}) {
      auto m = tiny_model(tiny_config(fam, att));
      const auto ids = random_ids(9, 259, rng);
      auto tr = forward(m, TokenBatch::single(ids)).trace;
      for (std::size_t l = 1; l < tr.snapshots.size(); ++l) {
        const auto& prev = tr.snapshots[l - 1];
        const auto& cur = tr.snapshots[l];
        for (std::size_t i = 0; i < cur.numel(); ++i) {
          const double sum = double(prev[i]) + tr.attn_residual[l - 1][i] + tr.mlp_residual[l - 1][i];
          CHECK(std::abs(cur[i] - sum) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("logits at t ignore tokens after t") {
  std::mt19937_64 rng(2);
  for (auto fam : {ModelFamily::gpt2_style, ModelFamily::llama_style}) {
    for (auto att : {AttentionKind::standard, AttentionKind::kv_bias}) {
      auto m = tiny_model(tiny_config(fam, att));
      for (int trial = 0; trial < 5; ++trial) {
        auto ids = random_ids(10, 259, rng);
        auto a = forward(m, TokenBatch::single(ids)).logits;
        const std::size_t t = 3 + trial;
        for (std::size_t j = t + 1; j < ids.size(); ++j) ids[j] = (ids[j] + 17) % 259;
        auto b = forward(m, TokenBatch::single(ids)).logits;
        for (std::size_t i = 0; i < (t + 1) * 259; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-6);
      }
    }
  }
}

TEST_CASE("mutating a snapshot and resuming equals a hooked forward") {
  std::mt19937_64 rng(3);
  auto m = tiny_model(tiny_config(ModelFamily::llama_style, AttentionKind::kv_bias));
  const auto ids = random_ids(7, 259, rng);
  const auto tokens = TokenBatch::single(ids);
  for (std::size_t layer = 0; layer <= 2; ++layer) {
    auto base = forward(m, tokens);
    auto patched = base.trace.snapshots[layer].detach();
    patched[5] = 123.0f;
    auto resumed = resume_from(m, tokens, layer, patched);

    ForwardOptions<float> opt;
    opt.hooks.push_back([layer](std::size_t l, Tensor<float>& s, const TokenBatch&) {
      if (l == layer) s[5] = 123.0f;
    });
    auto hooked = forward(m, tokens, opt);
    CHECK(same_bits(resumed.logits, hooked.logits));
    for (std::size_t l = 0; l < layer; ++l) {
      CHECK(same_bits(hooked.trace.snapshots[l], base.trace.snapshots[l]));
    }
    CHECK(hooked.trace.snapshots[layer][5] == 123.0f);
    if (layer < 2) CHECK_FALSE(same_bits(hooked.trace.snapshots[2], base.trace.snapshots[2]));
  }
}

TEST_CASE("family structure") {
  auto g = tiny_model(tiny_config(ModelFamily::gpt2_style));
  CHECK(g.has_position_table());
  CHECK_FALSE(g.has_rotary());
  CHECK(g.layers[0].mlp.kind == MlpKind::gelu);
  CHECK_FALSE(g.layers[0].mlp.w_gate.defined());
  auto l = tiny_model(tiny_config(ModelFamily::llama_style));
  CHECK_FALSE(l.has_position_table());
  CHECK(l.has_rotary());
  CHECK(l.layers[0].mlp.kind == MlpKind::swiglu);
  for (const auto& p : l.parameters()) CHECK(p.role != ParamRole::position_embedding);
}

TEST_CASE("embedding scaler") {
  auto c = tiny_config(ModelFamily::llama_style, AttentionKind::standard, NormKind::dyt);
  c.hidden_size = 64;
  c.n_heads = 4;
  auto m = tiny_model(c);
  CHECK(m.embed_scaler.item() == 8.0f);
  const std::vector<std::int32_t> ids{7};
  auto e = embed_with_scaler(m, TokenBatch::single(ids));
  double en = 0, rn = 0;
  for (std::size_t j = 0; j < 64; ++j) {
    en += double(e[j]) * e[j];
    rn += double(m.token_embedding[7 * 64 + j]) * m.token_embedding[7 * 64 + j];
  }
  CHECK(std::sqrt(en) == doctest::Approx(8.0 * std::sqrt(rn)).epsilon(1e-6));

  auto plain = tiny_model(tiny_config());
  CHECK_FALSE(plain.embed_scaler.defined());
}

TEST_CASE("dyt alphas come from the config") {
  auto c = tiny_config(ModelFamily::llama_style, AttentionKind::standard, NormKind::dyt);
  auto m = tiny_model(c);
  CHECK(m.layers[0].attn_norm.alpha.item() == 1.0f);
  CHECK(m.layers[1].mlp_norm.alpha.item() == 0.5f);
  CHECK(m.final_norm.alpha.item() == 0.5f);
  c.dyt_alpha_attention = 0.25;
  c.dyt_alpha_final = 2.0;
  auto n = tiny_model(c);
  CHECK(n.layers[1].attn_norm.alpha.item() == 0.25f);
  CHECK(n.final_norm.alpha.item() == 2.0f);
}

TEST_CASE("tied embeddings drop the head and share gradients") {
  auto c = tiny_config();
  c.tie_embeddings = true;
  auto m = tiny_model(c);
  CHECK_FALSE(m.lm_head.defined());
  const std::vector<std::int32_t> ids{1, 2, 3};
  const std::vector<std::int32_t> tg{2, 3, 4};
  ops::cross_entropy(forward(m, TokenBatch::single(ids)).logits, tg).backward();
  CHECK(m.token_embedding.grad()[4 * 16] != 0.0f);
}

TEST_CASE("whole-model gradients match central differences") {
  std::mt19937_64 rng(4);
  for (auto fam : {ModelFamily::gpt2_style, ModelFamily::llama_style}) {
    for (auto norm : {std::optional<NormKind>{}, std::optional<NormKind>{NormKind::dyt}}) {
      auto c = tiny_config(fam, AttentionKind::kv_bias, norm);
      c.hidden_size = 8;
      c.n_heads = 2;
      c.intermediate_size = 12;
      c.vocab_size = 11;
      auto m = build_model<double>(c, InitScheme{0.3, ResidualScaling::none, 9});
      const auto ids = random_ids(5, 11, rng);
      auto tg = random_ids(5, 11, rng);
      tg[0] = ops::kIgnore;
      std::vector<Tensor<double>> inputs;
      for (auto& p : m.parameters()) inputs.push_back(p.tensor);
      auto f = [&] { return ops::cross_entropy(forward(m, TokenBatch::single(ids)).logits, tg); };
      auto r = testing::check_gradients(f, inputs);
      INFO("worst " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("batched forward equals per-sequence forward") {
  std::mt19937_64 rng(5);
  auto m = tiny_model(tiny_config(ModelFamily::gpt2_style, AttentionKind::kv_bias));
  const auto a = random_ids(6, 259, rng), b = random_ids(6, 259, rng);
  TokenBatch batch{2, 6, a};
  batch.ids.insert(batch.ids.end(), b.begin(), b.end());
  auto both = forward(m, batch).logits;
  auto la = forward(m, TokenBatch::single(a)).logits;
  auto lb = forward(m, TokenBatch::single(b)).logits;
  for (std::size_t i = 0; i < la.numel(); ++i) {
    CHECK(std::abs(both[i] - la[i]) < 1e-5);
    CHECK(std::abs(both[la.numel() + i] - lb[i]) < 1e-5);
  }
}

}
