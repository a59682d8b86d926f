#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malab/model.hpp"

namespace malab {

enum class ResidualScaling { none, gpt2_residual, lir };

std::string_view to_string(ResidualScaling scaling);
ResidualScaling parse_residual_scaling(std::string_view name);

struct InitScheme {
  double base_std = 0.02;
  ResidualScaling residual_scaling = ResidualScaling::none;
  std::uint64_t seed = 0;

  void validate() const;

  /// gpt2_style: 0.02 with GPT-2 residual scaling. llama_style: 0.006 with
  /// LIR, or 0.02 with LIR when the norms are DyT.
  static InitScheme preset(const ModelConfig& config, std::uint64_t seed = 0);
};

using Rng = std::mt19937_64;

template <typename T>
void init_normal(std::span<T> out, double std, Rng& rng);

template <typename T>
Tensor<T> init_normal(const Shape& shape, double std, Rng& rng, bool requires_grad = false);

/// Divisor applied to the init std of residual-output projections in
/// decoder layer `layer` (zero-based) of an `n_layers` stack.
double residual_std_divisor(ResidualScaling scaling, std::size_t layer, std::size_t n_layers);

/// Draws every rank-2 weight (embeddings, projections, k'/v', lm_head) from
/// N(0, base_std^2) in parameters() order. Norm scales stay at 1, shifts at
/// 0, DyT alphas at their config values, the embedding scaler at sqrt(d).
template <typename T>
void initialize(Model<T>& model, const InitScheme& scheme);

/// Divides attention-output and MLP-down weights by the scheme's divisor.
/// Returns the names of the tensors it touched.
template <typename T>
std::vector<std::string> apply_residual_scaling(Model<T>& model, const InitScheme& scheme);

/// allocate_model + initialize + apply_residual_scaling.
template <typename T>
Model<T> build_model(const ModelConfig& config, const InitScheme& scheme);

struct TVRConfig {
  double target_std = 0.01;
  std::size_t interval_steps = 100;
  std::vector<ParamRole> scope = default_scope();

  void validate() const;
  bool in_scope(ParamRole role) const;
  /// Rank-2 decoder projections: q, k, v, o, gate, up, down.
  static std::vector<ParamRole> default_scope();
};

/// w *= target_std / std(w), population std. Returns false and leaves w
/// untouched (with a warning) when std(w) is zero.
template <typename T>
bool tvr_rescale(std::span<T> w, double target_std);

/// Rescaled copy of a rank-2 tensor.
template <typename T>
Tensor<T> tvr_rescale(const Tensor<T>& w, double target_std);

/// Rescales every in-scope parameter when step % interval_steps == 0.
/// Returns how many tensors were rescaled.
template <typename T>
std::size_t tvr_training_hook(Model<T>& model, const TVRConfig& tvr, std::size_t step);

}  // namespace malab
