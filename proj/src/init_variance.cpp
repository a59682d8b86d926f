#include "malab/init_variance.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "malab/stats.hpp"

namespace malab {

std::string_view to_string(ResidualScaling scaling) {
  switch (scaling) {
    case ResidualScaling::none: return "none";
    case ResidualScaling::gpt2_residual: return "gpt2_residual";
    case ResidualScaling::lir: return "lir";
  }
  return "?";
}

ResidualScaling parse_residual_scaling(std::string_view name) {
  if (name == "none") return ResidualScaling::none;
  if (name == "gpt2_residual") return ResidualScaling::gpt2_residual;
  if (name == "lir") return ResidualScaling::lir;
  throw ConfigError("unknown residual scaling '" + std::string(name) + "'");
}

void InitScheme::validate() const {
  if (!(base_std > 0) || !std::isfinite(base_std)) {
    throw ConfigError("init base_std must be positive, got " + std::to_string(base_std));
  }
}

InitScheme InitScheme::preset(const ModelConfig& config, std::uint64_t seed) {
  InitScheme s;
  s.seed = seed;
  if (config.family == ModelFamily::gpt2_style) {
    s.base_std = 0.02;
    s.residual_scaling = ResidualScaling::gpt2_residual;
  } else {
    s.base_std = config.norm == NormKind::dyt ? 0.02 : 0.006;
    s.residual_scaling = ResidualScaling::lir;
  }
  return s;
}

template <typename T>
void init_normal(std::span<T> out, double std, Rng& rng) {
  if (!(std > 0)) throw ConfigError("init_normal: std must be positive");
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : out) v = static_cast<T>(dist(rng));
}

template <typename T>
Tensor<T> init_normal(const Shape& shape, double std, Rng& rng, bool requires_grad) {
  Tensor<T> t(shape, T(0), requires_grad);
  init_normal<T>(t.data(), std, rng);
  return t;
}

double residual_std_divisor(ResidualScaling scaling, std::size_t layer, std::size_t n_layers) {
  switch (scaling) {
    case ResidualScaling::none: return 1.0;
    case ResidualScaling::gpt2_residual: return std::sqrt(2.0 * static_cast<double>(n_layers));
    case ResidualScaling::lir: return std::sqrt(2.0 * static_cast<double>(layer + 1));
  }
  return 1.0;
}

namespace {

template <typename T>
void reset_norm(NormParams<T>& n, double alpha) {
  std::ranges::fill(n.gamma.data(), T(1));
  if (n.beta.defined()) std::ranges::fill(n.beta.data(), T(0));
  if (n.alpha.defined()) n.alpha[0] = static_cast<T>(alpha);
}

}  // namespace

template <typename T>
void initialize(Model<T>& model, const InitScheme& scheme) {
  scheme.validate();
  Rng rng(scheme.seed);
  for (auto& p : model.parameters()) {
    if (p.tensor.rank() == 2) init_normal<T>(p.tensor.data(), scheme.base_std, rng);
  }
  const auto& c = model.config;
  for (auto& layer : model.layers) {
    reset_norm(layer.attn_norm, c.dyt_alpha_attention);
    reset_norm(layer.mlp_norm, c.dyt_alpha_mlp);
  }
  reset_norm(model.final_norm, c.dyt_alpha_final);
  if (model.embed_scaler.defined()) {
    model.embed_scaler[0] = static_cast<T>(std::sqrt(static_cast<double>(c.hidden_size)));
  }
}

template <typename T>
std::vector<std::string> apply_residual_scaling(Model<T>& model, const InitScheme& scheme) {
  std::vector<std::string> touched;
  if (scheme.residual_scaling == ResidualScaling::none) return touched;
  for (auto& p : model.parameters()) {
    if (!is_residual_output(p.role)) continue;
    const double div = residual_std_divisor(scheme.residual_scaling,
                                            static_cast<std::size_t>(p.layer),
                                            model.config.n_layers);
    for (auto& v : p.tensor.data()) v = static_cast<T>(static_cast<double>(v) / div);
    touched.push_back(p.name);
  }
  return touched;
}

template <typename T>
Model<T> build_model(const ModelConfig& config, const InitScheme& scheme) {
  auto model = allocate_model<T>(config);
  initialize(model, scheme);
  apply_residual_scaling(model, scheme);
  return model;
}

void TVRConfig::validate() const {
  if (!(target_std > 0) || !std::isfinite(target_std)) {
    throw ConfigError("tvr target_std must be positive, got " + std::to_string(target_std));
  }
  if (interval_steps < 1) throw ConfigError("tvr interval_steps must be >= 1");
}

bool TVRConfig::in_scope(ParamRole role) const {
  return std::ranges::find(scope, role) != scope.end();
}

std::vector<ParamRole> TVRConfig::default_scope() {
  return {ParamRole::attn_q,  ParamRole::attn_k,  ParamRole::attn_v,  ParamRole::attn_o,
          ParamRole::mlp_up, ParamRole::mlp_gate, ParamRole::mlp_down};
}

template <typename T>
bool tvr_rescale(std::span<T> w, double target_std) {
  if (w.empty()) return false;
  const double sd = population_std<T>(std::span<const T>(w.data(), w.size()));
  if (!(sd > 0)) {
    spdlog::warn("tvr_rescale: weight has zero std, skipping");
    return false;
  }
  const double factor = target_std / sd;
  for (auto& v : w) v = static_cast<T>(static_cast<double>(v) * factor);
  return true;
}

template <typename T>
Tensor<T> tvr_rescale(const Tensor<T>& w, double target_std) {
  if (w.rank() != 2) {
    throw DimensionError("tvr_rescale expects a rank-2 tensor, got " + shape_to_string(w.shape()));
  }
  auto out = w.detach();
  tvr_rescale<T>(out.data(), target_std);
  return out;
}

template <typename T>
std::size_t tvr_training_hook(Model<T>& model, const TVRConfig& tvr, std::size_t step) {
  if (step % tvr.interval_steps != 0) return 0;
  std::size_t n = 0;
  for (auto& p : model.parameters()) {
    if (p.tensor.rank() != 2 || !tvr.in_scope(p.role)) continue;
    if (tvr_rescale<T>(p.tensor.data(), tvr.target_std)) ++n;
  }
  return n;
}

#define MALAB_INSTANTIATE_INIT(T)                                                         \
  template void init_normal<T>(std::span<T>, double, Rng&);                               \
  template Tensor<T> init_normal<T>(const Shape&, double, Rng&, bool);                    \
  template void initialize(Model<T>&, const InitScheme&);                                 \
  template std::vector<std::string> apply_residual_scaling(Model<T>&, const InitScheme&); \
  template Model<T> build_model<T>(const ModelConfig&, const InitScheme&);                \
  template bool tvr_rescale<T>(std::span<T>, double);                                     \
  template Tensor<T> tvr_rescale(const Tensor<T>&, double);                               \
  template std::size_t tvr_training_hook(Model<T>&, const TVRConfig&, std::size_t);

MALAB_INSTANTIATE_INIT(float)
MALAB_INSTANTIATE_INIT(double)

#undef MALAB_INSTANTIATE_INIT

}  // namespace malab
