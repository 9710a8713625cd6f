// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "blockspec/core/error.hpp"

namespace blockspec {

/// Index of the largest entry; the lowest index wins ties.
template <typename T>
std::int32_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<std::int32_t>(best);
}

/// softmax(logits / temperature) in double precision; -inf logits get zero mass.
template <typename T>
std::vector<double> softmax_probs(std::span<const T> logits, double temperature) {
  BLOCKSPEC_CHECK(temperature > 0.0, ContractError, "softmax_probs: temperature must be > 0");
  double mx = -std::numeric_limits<double>::infinity();
  for (T l : logits) mx = std::max(mx, static_cast<double>(l));
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double l = static_cast<double>(logits[i]);
    p[i] = std::isinf(l) ? 0.0 : std::exp((l - mx) / temperature);
    s += p[i];
  }
  for (double& x : p) x /= s;
  return p;
}

/// Inverse-CDF draw from a (possibly unnormalized) nonnegative weight vector
/// with a uniform u in [0, 1). Never returns a zero-weight index.
inline std::int32_t sample_categorical(std::span<const double> weights, double u) {
  double total = 0.0;
  for (double w : weights) total += w;
  BLOCKSPEC_CHECK(total > 0.0 && std::isfinite(total), NumericError,
                  "sample_categorical: weights have no mass");
  const double target = u * total;
  double acc = 0.0;
  std::int32_t last = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = static_cast<std::int32_t>(i);
    if (target < acc) return last;
  }
  return last;
}

}  // namespace blockspec
