#pragma once

#include <span>

#include "malab/tensor.hpp"

namespace malab {

struct TensorStats {
  double max_abs = 0;
  /// Median of |x|; even lengths take the midpoint of the two central values.
  double median_abs = 0;
  double mean = 0;
  /// Population variance.
  double variance = 0;
};

/// Summary statistics over every element. Throws DomainError when empty.
template <typename T>
TensorStats reduce_stats(std::span<const T> values);

template <typename T>
TensorStats reduce_stats(const Tensor<T>& x) {
  return reduce_stats<T>(x.data());
}

/// Median of absolute values only (the expensive part of reduce_stats).
template <typename T>
double median_abs(std::span<const T> values);

/// Population standard deviation, accumulated in double.
template <typename T>
double population_std(std::span<const T> values);

}  // namespace malab
