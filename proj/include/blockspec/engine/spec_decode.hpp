// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockspec/engine/session.hpp"
#include "blockspec/engine/verify.hpp"

namespace blockspec {

struct SpecOptions {
  std::size_t block_size = 16;
  std::size_t max_new = 64;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> draft_temperature{};  // defaults to temperature
  bool greedy_draft = false;                // at temperature > 0, propose argmax tokens instead of sampling
};

struct PhaseTimes {
  double prefill = 0, draft = 0, verify = 0, fuse = 0, decode = 0;  // milliseconds; decode = wall time after prefill
};

struct DecodeMetrics {
  std::size_t cycles = 0;
  std::size_t total_accepted = 0;       // sum of accepted drafts
  std::size_t tokens_emitted = 0;       // including the prefill token
  std::size_t cycle_tokens = 0;         // emitted by cycles
  std::size_t draft_forward_count = 0;
  std::size_t verify_forward_count = 0;
  std::size_t prefill_forward_count = 0;
  std::size_t gamma = 0;
  std::vector<std::size_t> cycle_taus;
  std::vector<std::size_t> tau_histogram;  // index tau = 0..gamma+1
  PhaseTimes ms;

  double mean_tau() const { return cycles ? static_cast<double>(cycle_tokens) / static_cast<double>(cycles) : 0.0; }

  nlohmann::json to_json() const {
    return {{"cycles", cycles},
            {"mean_tau", mean_tau()},
            {"tau_histogram", tau_histogram},
            {"phase_ms", {{"draft", ms.draft}, {"verify", ms.verify}, {"fuse", ms.fuse}, {"prefill", ms.prefill},
                          {"decode", ms.decode}}},
            {"tokens_emitted", tokens_emitted},
            {"total_accepted", total_accepted},
            {"draft_forward_count", draft_forward_count},
            {"verify_forward_count", verify_forward_count}};
  }
};

struct SpecResult {
  std::vector<TokenId> tokens;  // generated tokens only
  DecodeMetrics metrics;
};

/// Speculative decoding loop: prefill (with taps) yields the first token and
/// the initial drafter context; each cycle drafts one block from the latest
/// token, verifies it with one target forward, rolls caches back and hands the
/// newly final features to the drafter.
template <typename T>
SpecResult spec_decode(std::span<const TokenId> prompt, const TargetModel<T>& target, DraftSession<T>& session,
                       const SpecOptions& opt) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t) { return std::chrono::duration<double, std::milli>(Clock::now() - t).count(); };
  BLOCKSPEC_CHECK(!prompt.empty(), ContractError, "spec_decode: empty prompt");
  BLOCKSPEC_CHECK(opt.block_size >= 2, ConfigError, "spec_decode: block size must be >= 2");
  BLOCKSPEC_CHECK(opt.temperature >= 0, ContractError, "spec_decode: temperature must be >= 0");
  const Vocab voc = target.vocab();
  const std::size_t max_seq = static_cast<std::size_t>(target.config().max_seq);
  const std::size_t gamma = opt.block_size - 1;
  const std::size_t limit = std::min(opt.max_new, max_seq - std::min(max_seq, prompt.size()));
  const double draft_t = opt.draft_temperature.value_or(opt.temperature);
  const DraftMode mode = (opt.temperature > 0 && !opt.greedy_draft) ? DraftMode::sampled(draft_t, opt.seed)
                                                                   : DraftMode::greedy();

  SpecResult res;
  auto& m = res.metrics;
  m.gamma = gamma;
  m.tau_histogram.assign(gamma + 2, 0);
  if (limit == 0) return res;

  TargetKVCache<T> cache(target.config());
  const TapSet* taps = session.taps();
  auto t0 = Clock::now();
  auto pre = target.forward(prompt, cache, taps);
  ++m.prefill_forward_count;
  const std::size_t vs = pre.logits.cols();
  TokenId anchor = pick_token<T>(std::span<const T>(pre.logits.ptr() + (prompt.size() - 1) * vs, vs),
                                 opt.temperature, opt.seed, prompt.size());
  session.on_prefill(prompt, pre.taps);
  m.ms.prefill = ms_since(t0);
  const double fuse_at_prefill = session.fuse_ms();

  res.tokens.push_back(anchor);
  const auto t_decode = Clock::now();
  std::size_t anchor_pos = prompt.size();
  while (anchor != voc.eos() && res.tokens.size() < limit) {
    auto t = Clock::now();
    DraftBlock blk = session.draft(anchor, anchor_pos, opt.block_size, mode);
    m.ms.draft += ms_since(t);
    ++m.draft_forward_count;
    // Never verify past the context window or the token budget.
    const std::size_t room = std::min(max_seq - 1 - anchor_pos, limit - res.tokens.size() - 1);
    if (blk.tokens.size() > room) {
      blk.tokens.resize(room);
      if (!blk.q.empty()) blk.q.resize(room);
    }
    t = Clock::now();
    BasicTensor<T> new_taps;
    const VerifyResult v = verify_block(blk, anchor, target, cache, opt.temperature, opt.seed, taps, &new_taps);
    m.ms.verify += ms_since(t);
    ++m.verify_forward_count;
    ++m.cycles;
    m.total_accepted += v.accepted;

    std::vector<TokenId> emitted(blk.tokens.begin(), blk.tokens.begin() + static_cast<std::ptrdiff_t>(v.accepted));
    emitted.push_back(v.bonus);
    std::size_t take = 0;
    while (take < emitted.size() && res.tokens.size() < limit) {
      res.tokens.push_back(emitted[take++]);
      if (res.tokens.back() == voc.eos()) break;
    }
    m.cycle_taus.push_back(take);
    ++m.tau_histogram[take];
    m.cycle_tokens += take;
    if (res.tokens.back() == voc.eos() || res.tokens.size() >= limit) break;

    std::vector<TokenId> committed{anchor};
    committed.insert(committed.end(), blk.tokens.begin(), blk.tokens.begin() + static_cast<std::ptrdiff_t>(v.accepted));
    session.on_commit(committed, new_taps);
    anchor = v.bonus;
    anchor_pos += v.accepted + 1;
  }
  m.ms.decode = ms_since(t_decode);
  m.ms.fuse = session.fuse_ms() - fuse_at_prefill;
  m.tokens_emitted = res.tokens.size();
  return res;
}

}  // namespace blockspec
