// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <vector>

#include "blockspec/corpus/tasks.hpp"
#include "blockspec/model/target.hpp"

namespace blockspec {

/// Replaces each response with the target's greedy continuation of the prompt
/// (up to max_new tokens or EOS, EOS kept). Samples whose continuation is only
/// EOS, or that contain a BOS token, are dropped.
template <typename T>
std::vector<Sample> distill_responses(const std::vector<Sample>& samples, const TargetModel<T>& target,
                                      std::size_t max_new) {
  BLOCKSPEC_CHECK(max_new >= 1, ConfigError, "distill: max_new must be >= 1");
  const Vocab v = target.vocab();
  std::vector<Sample> out;
  for (const auto& s : samples) {
    Sample d{s.prompt, ar_decode(target, s.prompt, {max_new, 0.0, 0}), s.task};
    if (d.response.empty() || (d.response.size() == 1 && d.response[0] == v.eos())) continue;
    if (std::find(d.response.begin(), d.response.end(), v.bos()) != d.response.end()) continue;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace blockspec
