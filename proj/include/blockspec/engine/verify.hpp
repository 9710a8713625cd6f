// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "blockspec/model/draft.hpp"
#include "blockspec/model/target.hpp"

namespace blockspec {

struct VerifyResult {
  std::size_t accepted = 0;  // a in [0, gamma]
  TokenId bonus = 0;
  std::size_t cycle_tau() const { return accepted + 1; }
};

/// Longest prefix with drafts[j] == target_argmax[j]; the bonus is the target's
/// token right after it. target_argmax has gamma + 1 entries.
inline VerifyResult greedy_accept(std::span<const TokenId> drafts, std::span<const TokenId> target_argmax) {
  BLOCKSPEC_CHECK(target_argmax.size() == drafts.size() + 1, ContractError,
                  "greedy_accept: need gamma + 1 target predictions");
  std::size_t a = 0;
  while (a < drafts.size() && drafts[a] == target_argmax[a]) ++a;
  return {a, target_argmax[a]};
}

/// Uniform draw for slot j (1-based) of the given stream.
using SlotUniform = std::function<double(RngStream, std::size_t)>;

/// normalize(max(0, p - q)); falls back to p when p == q leaves no mass.
inline std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q) {
  std::vector<double> r(p.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += r[i] = std::max(0.0, p[i] - q[i]);
  if (s <= 0) return {p.begin(), p.end()};
  for (double& x : r) x /= s;
  return r;
}

/// Lossless rejection rule. p has gamma + 1 rows (target distributions for
/// slots 1..gamma+1), q has gamma rows. Slot j accepts iff r_j < min(1, p_j(d)/q_j(d)).
inline VerifyResult speculative_accept(std::span<const TokenId> drafts, const std::vector<std::vector<double>>& q,
                                       const std::vector<std::vector<double>>& p, const SlotUniform& uniform) {
  const std::size_t g = drafts.size();
  BLOCKSPEC_CHECK(q.size() == g && p.size() == g + 1, ContractError, "speculative_accept: shape mismatch");
  for (std::size_t j = 0; j < g; ++j) {
    const auto d = static_cast<std::size_t>(drafts[j]);
    const double qd = q[j].at(d), pd = p[j].at(d);
    BLOCKSPEC_CHECK(qd > 0.0, ContractError,
                    "drafter proposed token " + std::to_string(d) + " outside its own support at slot " +
                        std::to_string(j + 1));
    const double r = uniform(RngStream::kAccept, j + 1);
    if (r < std::min(1.0, pd / qd)) continue;
    const auto res = residual_distribution(p[j], q[j]);
    return {j, sample_categorical(res, uniform(RngStream::kResidual, j + 1))};
  }
  return {g, sample_categorical(p[g], uniform(RngStream::kBonus, g + 1))};
}

/// Verification pass: one target forward over [anchor, d_1..d_gamma] at
/// positions anchor_pos.., then rollback to anchor_pos + a + 1 committed
/// tokens. `taps_out` (if given) receives tap rows for positions
/// anchor_pos..anchor_pos+a.
template <typename T>
VerifyResult verify_block(const DraftBlock& block, TokenId anchor, const TargetModel<T>& target,
                          TargetKVCache<T>& cache, double temperature, std::uint64_t seed,
                          const TapSet* taps = nullptr, BasicTensor<T>* taps_out = nullptr) {
  BLOCKSPEC_CHECK(cache.committed_len() == block.anchor_pos, ContractError,
                  "target cache desync: committed " + std::to_string(cache.committed_len()) + ", anchor at " +
                      std::to_string(block.anchor_pos));
  const std::size_t g = block.tokens.size();
  std::vector<TokenId> input{anchor};
  input.insert(input.end(), block.tokens.begin(), block.tokens.end());
  auto out = target.forward(input, cache, taps);
  const std::size_t vs = out.logits.cols();
  auto row = [&](std::size_t j) { return std::span<const T>(out.logits.ptr() + j * vs, vs); };
  VerifyResult res;
  if (temperature == 0.0) {
    std::vector<TokenId> yhat(g + 1);
    for (std::size_t j = 0; j <= g; ++j) yhat[j] = argmax(row(j));
    res = greedy_accept(block.tokens, yhat);
  } else {
    std::vector<std::vector<double>> p(g + 1);
    for (std::size_t j = 0; j <= g; ++j) p[j] = softmax_probs(row(j), temperature);
    std::vector<std::vector<double>> q = block.q;
    if (q.empty()) {  // greedy drafter: point mass on each proposal
      q.assign(g, std::vector<double>(vs, 0.0));
      for (std::size_t j = 0; j < g; ++j) q[j][static_cast<std::size_t>(block.tokens[j])] = 1.0;
    }
    const std::size_t base = block.anchor_pos;
    res = speculative_accept(block.tokens, q, p, [&](RngStream s, std::size_t j) {
      return CounterRng::uniform(seed, s, base + j);
    });
  }
  cache.truncate(block.anchor_pos + res.accepted + 1);
  if (taps && taps_out) *taps_out = ops::slice_rows(out.taps, 0, res.accepted + 1);
  return res;
}

}  // namespace blockspec
