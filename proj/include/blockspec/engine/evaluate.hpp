// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "blockspec/corpus/tasks.hpp"
#include "blockspec/engine/spec_decode.hpp"

namespace blockspec {

/// Aggregate of speculative decoding over a prompt set.
struct TauSummary {
  std::size_t prompts = 0;
  std::size_t cycles = 0;
  std::size_t cycle_tokens = 0;
  std::size_t tokens = 0;
  std::size_t mismatches = 0;  // prompts whose output differs from ar_decode (when checked)
  std::vector<std::size_t> tau_histogram;

  double mean_tau() const { return cycles ? static_cast<double>(cycle_tokens) / static_cast<double>(cycles) : 0.0; }
  /// Fraction of cycles that accepted the whole block.
  double full_block_fraction() const {
    return cycles && !tau_histogram.empty() ? static_cast<double>(tau_histogram.back()) / static_cast<double>(cycles)
                                            : 0.0;
  }
  void add(const DecodeMetrics& m) {
    ++prompts;
    cycles += m.cycles;
    cycle_tokens += m.cycle_tokens;
    tokens += m.tokens_emitted;
    if (tau_histogram.size() < m.tau_histogram.size()) tau_histogram.resize(m.tau_histogram.size(), 0);
    for (std::size_t i = 0; i < m.tau_histogram.size(); ++i) tau_histogram[i] += m.tau_histogram[i];
  }
};

/// Runs spec_decode over every prompt; with check_lossless (temperature 0
/// only) each output is compared against ar_decode.
template <typename T>
TauSummary evaluate_tau(const std::vector<std::vector<TokenId>>& prompts, const TargetModel<T>& target,
                        const DraftModel<T>& drafter, const SpecOptions& opt, bool check_lossless = false) {
  TauSummary s;
  for (const auto& p : prompts) {
    auto session = make_session(drafter);
    auto res = spec_decode<T>(p, target, *session, opt);
    s.add(res.metrics);
    if (check_lossless && opt.temperature == 0.0) {
      const auto ref = ar_decode(target, p, {.max_new = opt.max_new});
      if (ref != res.tokens) ++s.mismatches;
    }
  }
  return s;
}

inline std::vector<std::vector<TokenId>> prompts_of(const std::vector<Sample>& samples) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.prompt);
  return out;
}

}  // namespace blockspec
