#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "malab/layers.hpp"

namespace malab {

// Key positions are 0..T-1 for real tokens; T addresses the KV bias slot.

struct Decomposition {
  std::vector<double> bias_part;      // sum over i in C of p_i v_i
  std::vector<double> residual_part;  // sum over the other visible slots
};

/// Splits one query's attention output by the concentration set `C`.
/// Throws ContractError when C names a slot the query cannot see.
Decomposition decompose(std::span<const double> probs, std::span<const double> values,
                        std::size_t head_dim, std::size_t query, std::size_t seq_len,
                        bool has_bias_slot, std::span<const std::size_t> concentration);

Decomposition decompose(const AttentionHeadCapture& head, std::size_t query,
                        std::span<const std::size_t> concentration);

/// Maximum pairwise L2 distance between bias parts, divided by their mean
/// L2 norm. Needs at least two decompositions.
double bias_constancy(std::span<const Decomposition> parts);

struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> cells;  // rows x cols, NaN where masked

  double at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
};

/// Mean pre-softmax logits over heads. Masked cells are NaN.
Heatmap avg_logit_heatmap(const AttentionLayerCapture& layer);

/// Mean probabilities over heads. Masked cells are NaN.
Heatmap avg_prob_heatmap(const AttentionLayerCapture& layer);

/// Mean over heads and queries of the probability mass on `targets`.
double concentration(const AttentionLayerCapture& layer, std::span<const std::size_t> targets);

double concentration_on_first(const AttentionLayerCapture& layer);
/// Throws ContractError when the capture has no bias slot.
double concentration_on_bias(const AttentionLayerCapture& layer);

}  // namespace malab
