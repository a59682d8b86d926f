#pragma once

#include <cstddef>
#include <vector>

#include "malab/model.hpp"

namespace malab {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-7;
  double weight_decay = 0.1;
};

template <typename T>
struct AdamWState {
  std::size_t step = 0;  // completed steps
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// Rank-2 weights are decayed; vectors (norm scales and shifts, the DyT
/// alpha, the embedding scaler) are not.
template <typename T>
bool is_decayed(const NamedParam<T>& p) {
  return p.tensor.rank() == 2;
}

/// One bias-corrected AdamW update with decoupled weight decay:
///   p -= lr * wd * p;  m, v moment updates;  p -= lr * m_hat / (sqrt(v_hat) + eps)
/// Parameters without a gradient count as zero gradient. Throws
/// NumericError naming the parameter, before anything is modified, when a
/// gradient is not finite.
template <typename T>
void adamw_step(const std::vector<NamedParam<T>>& params, AdamWState<T>& state, double lr,
                const AdamWConfig& config);

struct ScheduleConfig {
  double peak_lr = 6e-4;
  double end_lr = 6e-5;
  double warmup_tokens = 0;
  double total_tokens = 1;
};

/// Linear warmup 0 -> peak, then cosine decay peak -> end at total_tokens.
double lr_at(double tokens_seen, const ScheduleConfig& config);

struct ClipResult {
  double norm = 0;   // global L2 norm before clipping
  double scale = 1;  // factor applied to every gradient
};

template <typename T>
double global_grad_norm(const std::vector<NamedParam<T>>& params);

/// Scales every gradient by max_norm / norm when norm exceeds max_norm.
template <typename T>
ClipResult clip_global_norm(const std::vector<NamedParam<T>>& params, double max_norm);

template <typename T>
void zero_grads(const std::vector<NamedParam<T>>& params);

}  // namespace malab
