#include <cmath>
#include <random>

#include "doctest.h"
#include "malab/init_variance.hpp"
#include "malab/stats.hpp"
#include "support/oracles.hpp"

using namespace malab;
using malab::testing::tiny_config;

namespace {

double stdev(std::span<const float> v) { return population_std<float>(v); }

}  // namespace

TEST_SUITE("init_variance") {

TEST_CASE("normal draws have the requested spread") {
  Rng rng(1);
  for (double s : {0.02, 0.006}) {
    auto t = init_normal<float>(Shape{512, 512}, s, rng);
    CHECK(std::abs(stdev(t.data()) / s - 1) < 0.05);
  }
  std::vector<double> big(1000000);
  init_normal<double>(big, 0.02, rng);
  double mean = 0;
  for (double v : big) mean += v;
  mean /= big.size();
  CHECK(std::abs(mean) < 3 * 0.02 / std::sqrt(1e6));
  CHECK_THROWS_AS(init_normal<float>(Shape{2}, 0.0, rng), ConfigError);
}

TEST_CASE("family presets") {
  auto g = InitScheme::preset(ModelConfig::desk_reference(ModelFamily::gpt2_style));
  CHECK(g.base_std == 0.02);
  CHECK(g.residual_scaling == ResidualScaling::gpt2_residual);
  auto lc = ModelConfig::desk_reference(ModelFamily::llama_style);
  auto l = InitScheme::preset(lc);
  CHECK(l.base_std == 0.006);
  CHECK(l.residual_scaling == ResidualScaling::lir);
  lc.norm = NormKind::dyt;
  auto d = InitScheme::preset(lc);
  CHECK(d.base_std == 0.02);
  CHECK(d.residual_scaling == ResidualScaling::lir);
  CHECK_THROWS_AS((InitScheme{-1.0}).validate(), ConfigError);
}

TEST_CASE("residual divisors") {
  CHECK(residual_std_divisor(ResidualScaling::gpt2_residual, 2, 4) == std::sqrt(8.0));
  CHECK(residual_std_divisor(ResidualScaling::lir, 0, 4) == std::sqrt(2.0));
  CHECK(residual_std_divisor(ResidualScaling::lir, 3, 4) == std::sqrt(8.0));
  CHECK(residual_std_divisor(ResidualScaling::none, 3, 4) == 1.0);
}

TEST_CASE("gpt2 residual scaling shrinks output projections only") {
  auto c = ModelConfig::desk_reference(ModelFamily::gpt2_style);
  auto plain = build_model<float>(c, {0.02, ResidualScaling::none, 4});
  auto scaled = build_model<float>(c, {0.02, ResidualScaling::gpt2_residual, 4});
  auto pp = plain.parameters(), ps = scaled.parameters();
  for (std::size_t i = 0; i < pp.size(); ++i) {
    const auto a = pp[i].tensor.data(), b = ps[i].tensor.data();
    if (is_residual_output(pp[i].role)) {
      CHECK(std::abs(stdev(b) - 0.02 / std::sqrt(8.0)) / (0.02 / std::sqrt(8.0)) < 0.05);
      for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(b[j] == static_cast<float>(static_cast<double>(a[j]) / std::sqrt(8.0)));
      }
    } else {
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
      if (pp[i].tensor.rank() == 2) CHECK(std::abs(stdev(a) / 0.02 - 1) < 0.05);
    }
  }
}

TEST_CASE("residual scaling touches exactly the output projections") {
  auto c = tiny_config(ModelFamily::llama_style, AttentionKind::kv_bias);
  auto m = allocate_model<float>(c);
  initialize(m, InitScheme{0.02, ResidualScaling::lir, 1});
  auto names = apply_residual_scaling(m, InitScheme{0.02, ResidualScaling::lir, 1});
  CHECK(names == std::vector<std::string>{"layers.0.attn.wo", "layers.0.mlp.w_down",
                                          "layers.1.attn.wo", "layers.1.mlp.w_down"});
  CHECK(apply_residual_scaling(m, InitScheme{0.02, ResidualScaling::none, 1}).empty());
}

TEST_CASE("initialization leaves norms and scalers at their neutral values") {
  auto c = tiny_config(ModelFamily::gpt2_style, AttentionKind::kv_bias, NormKind::dyt);
  auto m = testing::tiny_model(c);
  for (const auto& p : m.parameters()) {
    if (p.role == ParamRole::norm_gamma) {
      for (float v : p.tensor.data()) CHECK(v == 1.0f);
    } else if (p.role == ParamRole::norm_beta) {
      for (float v : p.tensor.data()) CHECK(v == 0.0f);
    } else if (p.role == ParamRole::embed_scaler) {
      CHECK(p.tensor.item() == 4.0f);
    } else if (p.role == ParamRole::kv_bias_k || p.role == ParamRole::kv_bias_v) {
      CHECK(stdev(p.tensor.data()) > 0);
    }
  }
}

TEST_CASE("tvr rescale examples") {
  std::vector<double> w{3, 4};
  CHECK(tvr_rescale<double>(w, 0.01));
  CHECK(w[0] == doctest::Approx(0.06).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.08).epsilon(1e-12));

  std::vector<double> c(5, 2.0);
  CHECK_FALSE(tvr_rescale<double>(c, 0.01));
  CHECK(c == std::vector<double>(5, 2.0));

  Tensor<double> vec(Shape{4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(tvr_rescale(vec, 0.01), DimensionError);
}

TEST_CASE("tvr rescale properties") {
  Rng rng(2);
  for (double target : {0.01, 0.02}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto w = init_normal<double>(Shape{16, 24}, 0.05 + 0.01 * trial, rng);
      auto r = tvr_rescale(w, target);
      CHECK(std::abs(population_std<double>(r.data()) / target - 1) < 1e-6);

      auto rr = tvr_rescale(r, target);
      auto scaled = w.detach();
      for (auto& v : scaled.data()) v *= 3.7;
      auto rs = tvr_rescale(scaled, target);
      double dot = 0, n1 = 0, n2 = 0;
      std::size_t arg_w = 0, arg_r = 0;
      for (std::size_t i = 0; i < w.numel(); ++i) {
        CHECK(std::abs(rr[i] - r[i]) <= 1e-12);
        CHECK(std::abs(rs[i] - r[i]) <= 1e-12);
        CHECK(std::signbit(r[i]) == std::signbit(w[i]));
        dot += w[i] * r[i];
        n1 += w[i] * w[i];
        n2 += r[i] * r[i];
        if (std::abs(w[i]) > std::abs(w[arg_w])) arg_w = i;
        if (std::abs(r[i]) > std::abs(r[arg_r])) arg_r = i;
      }
      CHECK(std::abs(dot / std::sqrt(n1 * n2) - 1) < 1e-12);
      CHECK(arg_w == arg_r);
    }
  }
  auto at = init_normal<double>(Shape{8, 8}, 0.01, rng);
  auto fixed = tvr_rescale(at, 0.01);
  auto again = tvr_rescale(fixed, 0.01);
  for (std::size_t i = 0; i < fixed.numel(); ++i) CHECK(std::abs(again[i] - fixed[i]) < 1e-12);
}

TEST_CASE("tvr hook respects interval and scope") {
  auto c = tiny_config(ModelFamily::llama_style, AttentionKind::kv_bias, NormKind::dyt);
  auto m = testing::tiny_model(c);
  TVRConfig tvr{0.01, 100};
  auto before = clone_model(m);
  CHECK(tvr_training_hook(m, tvr, 50) == 0);
  auto pa = m.parameters(), pb = before.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                     pb[i].tensor.data().begin()));
  }
  tvr.interval_steps = 1;
  CHECK(tvr_training_hook(m, tvr, 7) == 7 * c.n_layers);
  pa = m.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const bool scoped = is_decoder_projection(pa[i].role);
    CHECK(tvr.in_scope(pa[i].role) == scoped);
    if (scoped) {
      CHECK(std::abs(stdev(pa[i].tensor.data()) / 0.01 - 1) < 1e-5);
    } else {
      CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                       pb[i].tensor.data().begin()));
    }
  }
  CHECK_THROWS_AS((TVRConfig{0.0, 1}).validate(), ConfigError);
  CHECK_THROWS_AS((TVRConfig{0.01, 0}).validate(), ConfigError);
}

}
