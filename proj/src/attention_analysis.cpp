#include "malab/attention_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "malab/errors.hpp"

namespace malab {

namespace {

bool visible(std::size_t slot, std::size_t query, std::size_t seq_len, bool has_bias) {
  return slot <= query || (has_bias && slot == seq_len);
}

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void require_heads(const AttentionLayerCapture& layer) {
  if (layer.heads.empty()) throw ContractError("attention capture has no heads");
}

}  // namespace

Decomposition decompose(std::span<const double> probs, std::span<const double> values,
                        std::size_t head_dim, std::size_t query, std::size_t seq_len,
                        bool has_bias_slot, std::span<const std::size_t> concentration) {
  const std::size_t slots = seq_len + (has_bias_slot ? 1 : 0);
  if (query >= seq_len) throw ContractError("decompose: query out of range");
  if (probs.size() != slots || values.size() != slots * head_dim) {
    throw DimensionError("decompose: expected " + std::to_string(slots) + " slots");
  }
  std::vector<bool> in_c(slots, false);
  for (std::size_t s : concentration) {
    if (s >= slots || !visible(s, query, seq_len, has_bias_slot)) {
      throw ContractError("decompose: slot " + std::to_string(s) + " is not visible to query " +
                          std::to_string(query));
    }
    in_c[s] = true;
  }
  Decomposition d{std::vector<double>(head_dim, 0.0), std::vector<double>(head_dim, 0.0)};
  for (std::size_t s = 0; s < slots; ++s) {
    if (!visible(s, query, seq_len, has_bias_slot)) continue;
    auto& dst = in_c[s] ? d.bias_part : d.residual_part;
    const double p = probs[s];
    for (std::size_t j = 0; j < head_dim; ++j) dst[j] += p * values[s * head_dim + j];
  }
  return d;
}

Decomposition decompose(const AttentionHeadCapture& head, std::size_t query,
                        std::span<const std::size_t> concentration) {
  const std::size_t slots = head.slots();
  std::span<const double> row(head.probs.data() + query * slots, slots);
  return decompose(row, head.values, head.head_dim, query, head.seq_len, head.has_bias_slot,
                   concentration);
}

double bias_constancy(std::span<const Decomposition> parts) {
  if (parts.size() < 2) throw ContractError("bias_constancy needs at least two queries");
  double max_dist = 0, mean_norm = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    mean_norm += norm2(parts[i].bias_part);
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      const auto& a = parts[i].bias_part;
      const auto& b = parts[j].bias_part;
      if (a.size() != b.size()) throw DimensionError("bias_constancy: mismatched head dims");
      double s = 0;
      for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      max_dist = std::max(max_dist, std::sqrt(s));
    }
  }
  mean_norm /= static_cast<double>(parts.size());
  if (mean_norm == 0) return max_dist == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return max_dist / mean_norm;
}

namespace {

template <typename Get>
Heatmap head_average(const AttentionLayerCapture& layer, Get get) {
  require_heads(layer);
  const auto& h0 = layer.heads.front();
  Heatmap m;
  m.rows = h0.seq_len;
  m.cols = h0.slots();
  m.cells.assign(m.rows * m.cols, 0.0);
  for (const auto& h : layer.heads) {
    if (h.seq_len != h0.seq_len || h.slots() != h0.slots()) {
      throw DimensionError("heatmap: heads disagree on shape");
    }
    for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] += get(h, i);
  }
  const double n = static_cast<double>(layer.heads.size());
  for (std::size_t q = 0; q < m.rows; ++q) {
    for (std::size_t s = 0; s < m.cols; ++s) {
      double& c = m.cells[q * m.cols + s];
      c = visible(s, q, h0.seq_len, h0.has_bias_slot) ? c / n
                                                      : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return m;
}

}  // namespace

Heatmap avg_logit_heatmap(const AttentionLayerCapture& layer) {
  return head_average(layer, [](const AttentionHeadCapture& h, std::size_t i) {
    return std::isnan(h.logits[i]) ? 0.0 : h.logits[i];
  });
}

Heatmap avg_prob_heatmap(const AttentionLayerCapture& layer) {
  return head_average(layer, [](const AttentionHeadCapture& h, std::size_t i) { return h.probs[i]; });
}

double concentration(const AttentionLayerCapture& layer, std::span<const std::size_t> targets) {
  require_heads(layer);
  std::vector<std::size_t> set(targets.begin(), targets.end());
  std::ranges::sort(set);
  set.erase(std::unique(set.begin(), set.end()), set.end());
  double total = 0;
  std::size_t n = 0;
  for (const auto& h : layer.heads) {
    for (std::size_t s : set) {
      if (s >= h.slots()) {
        throw ContractError("concentration: slot " + std::to_string(s) + " outside capture");
      }
    }
    for (std::size_t q = 0; q < h.seq_len; ++q) {
      double mass = 0;
      for (std::size_t s : set) mass += h.prob(q, s);
      total += mass;
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

double concentration_on_first(const AttentionLayerCapture& layer) {
  const std::size_t first = 0;
  return concentration(layer, std::span<const std::size_t>(&first, 1));
}

double concentration_on_bias(const AttentionLayerCapture& layer) {
  require_heads(layer);
  if (!layer.heads.front().has_bias_slot) {
    throw ContractError("concentration: capture has no bias slot");
  }
  const std::size_t slot = layer.heads.front().seq_len;
  return concentration(layer, std::span<const std::size_t>(&slot, 1));
}

}  // namespace malab
