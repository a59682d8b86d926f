#include "malab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace malab {

template <typename T>
double median_abs(std::span<const T> values) {
  if (values.empty()) throw DomainError("median of an empty tensor");
  std::vector<double> abs(values.size());
  std::transform(values.begin(), values.end(), abs.begin(),
                 [](T v) { return std::abs(static_cast<double>(v)); });
  const std::size_t n = abs.size();
  const std::size_t mid = n / 2;
  std::nth_element(abs.begin(), abs.begin() + static_cast<std::ptrdiff_t>(mid), abs.end());
  const double upper = abs[mid];
  if (n % 2 == 1) return upper;
  const double lower =
      *std::max_element(abs.begin(), abs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

template <typename T>
double population_std(std::span<const T> values) {
  if (values.empty()) throw DomainError("std of an empty tensor");
  double sum = 0;
  for (T v : values) sum += v;
  const double mu = sum / static_cast<double>(values.size());
  double ss = 0;
  for (T v : values) {
    const double d = static_cast<double>(v) - mu;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(values.size()));
}

template <typename T>
TensorStats reduce_stats(std::span<const T> values) {
  if (values.empty()) throw DomainError("reduce_stats of an empty tensor");
  TensorStats s;
  double sum = 0;
  for (T v : values) {
    s.max_abs = std::max(s.max_abs, std::abs(static_cast<double>(v)));
    sum += v;
  }
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (T v : values) {
    const double d = static_cast<double>(v) - s.mean;
    ss += d * d;
  }
  s.variance = ss / static_cast<double>(values.size());
  s.median_abs = median_abs(values);
  return s;
}

template TensorStats reduce_stats<float>(std::span<const float>);
template TensorStats reduce_stats<double>(std::span<const double>);
template double median_abs<float>(std::span<const float>);
template double median_abs<double>(std::span<const double>);
template double population_std<float>(std::span<const float>);
template double population_std<double>(std::span<const double>);

}  // namespace malab
