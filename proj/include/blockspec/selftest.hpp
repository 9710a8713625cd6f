// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockspec/core/hash.hpp"
#include "blockspec/engine/evaluate.hpp"
#include "blockspec/train/draft_trainer.hpp"

namespace blockspec {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  nlohmann::json detail;
};

struct SelftestResult {
  std::vector<SelftestCheck> checks;
  std::string digest;  // hash of every decoded token sequence
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return {{"passed", passed()}, {"checks", arr}, {"digest", digest}};
  }
};

/// Independent statement of the training-mask cell rule: a block row sees
/// context columns before its anchor and every column of its own block.
inline bool block_mask_rule(std::span<const std::size_t> anchors, std::size_t block_size, std::size_t context_len,
                            std::size_t row, std::size_t col) {
  const std::size_t b = row / block_size;
  if (col < context_len) return col < anchors[b];
  return (col - context_len) / block_size == b;
}

/// End-to-end oracles on small random models: greedy losslessness for
/// conditioned and unconditioned drafters, the sampled acceptance rule, and the
/// training-mask cell rule. Deterministic in `seed`.
inline SelftestResult run_selftest(std::uint64_t seed = 0, std::size_t prompts = 24, std::size_t mask_plans = 1000) {
  SelftestResult res;
  Fnv1a digest;

  TargetConfig tc;
  tc.n_layers = 4;
  tc.d_model = 32;
  tc.n_heads = 2;
  tc.d_ff = 64;
  tc.max_seq = 128;
  const TargetModel<float> target(tc, mix_seed(seed, 1, 0));
  const auto samples = gen_mixture({Task::kCopyRepeat, Task::kModularChain, Task::kPatternGrammar}, seed + 11,
                                   (prompts + 2) / 3);
  const auto ps = prompts_of(samples);

  struct Variant {
    const char* name;
    bool conditioning;
    int block_size;
  };
  for (const Variant v : {Variant{"lossless_conditioned_b4", true, 4}, Variant{"lossless_conditioned_b8", true, 8},
                          Variant{"lossless_unconditioned_b8", false, 8}}) {
    DraftConfig dc;
    dc.n_layers = 2;
    dc.d_model = 32;
    dc.n_heads = 2;
    dc.d_ff = 64;
    dc.block_size = v.block_size;
    dc.n_feat = 1;
    dc.conditioning = v.conditioning;
    const DraftModel<float> drafter(dc, target, mix_seed(seed, 2, static_cast<std::uint64_t>(v.block_size)));
    std::size_t mismatches = 0, cycles = 0, bad_tau = 0, bad_counts = 0;
    for (const auto& p : ps) {
      auto session = make_session(drafter);
      const auto out = spec_decode<float>(p, target, *session, {.block_size = static_cast<std::size_t>(dc.block_size), .max_new = 40});
      const auto ref = ar_decode(target, p, {.max_new = 40});
      if (out.tokens != ref) ++mismatches;
      const auto& m = out.metrics;
      cycles += m.cycles;
      for (auto t : m.cycle_taus)
        if (t < 1 || t > static_cast<std::size_t>(dc.block_size)) ++bad_tau;
      if (m.draft_forward_count != m.cycles || m.verify_forward_count != m.cycles) ++bad_counts;
      const std::uint64_t n = out.tokens.size();
      digest.update_values(std::span<const std::uint64_t>(&n, 1));
      digest.update_values(std::span<const TokenId>(out.tokens));
    }
    res.checks.push_back({v.name, mismatches == 0 && bad_tau == 0 && bad_counts == 0,
                          {{"prompts", ps.size()},
                           {"mismatches", mismatches},
                           {"cycles", cycles},
                           {"tau_out_of_range", bad_tau},
                           {"forward_count_errors", bad_counts}}});
  }

  {
    // Rejection rule on fixed distributions: first emitted token ~ p.
    const std::vector<double> p0{0.05, 0.3, 0.1, 0.25, 0.2, 0.1};
    const std::vector<double> q0{0.3, 0.05, 0.2, 0.15, 0.1, 0.2};
    const std::vector<std::vector<double>> p{p0, std::vector<double>(6, 1.0 / 6)};
    const int n = 20000;
    std::vector<double> freq(p0.size(), 0.0);
    PhiloxEngine rng(mix_seed(seed, 3, 0), RngStream::kAccept);
    for (int i = 0; i < n; ++i) {
      const std::vector<TokenId> d{static_cast<TokenId>(sample_categorical(q0, rng.uniform()))};
      const auto r = speculative_accept(d, {q0}, p, [&](RngStream, std::size_t) { return rng.uniform(); });
      freq[static_cast<std::size_t>(r.accepted ? d[0] : r.bonus)] += 1.0 / n;
    }
    double tv = 0;
    for (std::size_t i = 0; i < p0.size(); ++i) tv += 0.5 * std::abs(freq[i] - p0[i]);
    res.checks.push_back({"sampled_acceptance_rule", tv < 0.02, {{"total_variation", tv}, {"draws", n}}});
  }

  {
    PhiloxEngine rng(mix_seed(seed, 4, 0), RngStream::kData);
    std::size_t violations = 0, cells = 0;
    for (std::size_t plan_id = 0; plan_id < mask_plans; ++plan_id) {
      const auto len = static_cast<std::size_t>(rng.range(4, 64));
      const auto prompt = static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(len) - 2));
      const auto B = static_cast<std::size_t>(rng.range(2, 16));
      const auto K = static_cast<std::size_t>(rng.range(1, 12));
      const auto plan = sample_anchors(len, prompt, K, seed, plan_id, 0);
      const auto m = build_block_mask(plan.anchors, B, len);
      for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c, ++cells)
          if (m.allowed(r, c) != block_mask_rule(plan.anchors, B, len, r, c)) ++violations;
    }
    res.checks.push_back(
        {"training_mask_rule", violations == 0, {{"plans", mask_plans}, {"cells", cells}, {"violations", violations}}});
  }

  {
    const auto w = loss_weights(16, 7.0);
    bool ok = w[0] == 1.0;
    for (std::size_t k = 1; k < w.size(); ++k) ok = ok && std::abs(w[k] / w[k - 1] - std::exp(-1.0 / 7.0)) < 1e-9;
    res.checks.push_back({"loss_weights", ok, {{"w1", w[0]}, {"w8", w[7]}}});
  }
  res.digest = digest.hex();
  return res;
}

}  // namespace blockspec
