#include "malab/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace malab {

template <typename T>
void adamw_step(const std::vector<NamedParam<T>>& params, AdamWState<T>& state, double lr,
                const AdamWConfig& config) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in " + p.name + " (role " +
                           std::string(to_string(p.role)) + ")");
      }
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T(0));
      state.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adamw: optimizer state does not match the parameter list");
  }
  const std::size_t t = ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> w = params[i].tensor;
    auto data = w.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != data.size()) throw ContractError("adamw: state size mismatch for " + params[i].name);
    const bool has_grad = w.has_grad();
    const double decay = is_decayed(params[i]) ? lr * config.weight_decay : 0.0;
    const T* grad = has_grad ? w.grad().data() : nullptr;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad ? static_cast<double>(grad[j]) : 0.0;
      double p = static_cast<double>(data[j]);
      p -= decay * p;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p -= lr * (mj / c1) / (std::sqrt(vj / c2) + config.eps);
      data[j] = static_cast<T>(p);
    }
  }
}

double lr_at(double tokens_seen, const ScheduleConfig& c) {
  if (tokens_seen < c.warmup_tokens) return c.peak_lr * tokens_seen / c.warmup_tokens;
  const double span = c.total_tokens - c.warmup_tokens;
  double progress = span > 0 ? (tokens_seen - c.warmup_tokens) / span : 1.0;
  progress = std::clamp(progress, 0.0, 1.0);
  return c.end_lr + (c.peak_lr - c.end_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double global_grad_norm(const std::vector<NamedParam<T>>& params) {
  double s = 0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) s += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(s);
}

template <typename T>
ClipResult clip_global_norm(const std::vector<NamedParam<T>>& params, double max_norm) {
  ClipResult r;
  r.norm = global_grad_norm(params);
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor<T> w = p.tensor;
      for (auto& g : w.grad()) g = static_cast<T>(static_cast<double>(g) * r.scale);
    }
  }
  return r;
}

template <typename T>
void zero_grads(const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) {
    Tensor<T> w = p.tensor;
    w.zero_grad();
  }
}

#define MALAB_INSTANTIATE_OPTIM(T)                                                           \
  template void adamw_step(const std::vector<NamedParam<T>>&, AdamWState<T>&, double,       \
                           const AdamWConfig&);                                              \
  template double global_grad_norm(const std::vector<NamedParam<T>>&);                       \
  template ClipResult clip_global_norm(const std::vector<NamedParam<T>>&, double);           \
  template void zero_grads(const std::vector<NamedParam<T>>&);

MALAB_INSTANTIATE_OPTIM(float)
MALAB_INSTANTIATE_OPTIM(double)

#undef MALAB_INSTANTIATE_OPTIM

}  // namespace malab
