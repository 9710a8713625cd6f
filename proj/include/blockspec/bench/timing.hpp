// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <vector>

namespace blockspec {

struct TimingPolicy {
  std::size_t warmup = 2;    // discarded, about 30% of all runs
  std::size_t measured = 5;  // median reported
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Index of the median element (lower median for even sizes).
inline std::size_t median_index(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx.empty() ? 0 : idx[(idx.size() - 1) / 2];
}

/// Median wall time of fn() in milliseconds on a monotonic clock.
template <typename F>
double time_median_ms(F&& fn, const TimingPolicy& pol = {}) {
  using Clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < pol.warmup; ++i) fn();
  std::vector<double> t;
  for (std::size_t i = 0; i < pol.measured; ++i) {
    const auto t0 = Clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  return median(std::move(t));
}

}  // namespace blockspec
