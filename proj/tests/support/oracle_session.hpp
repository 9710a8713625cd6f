// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "blockspec/engine/session.hpp"

namespace blockspec::testing {

/// Proposes the reference continuation, optionally corrupting slot `wrong_at`.
class OracleSession : public DraftSession<float> {
 public:
  OracleSession(std::vector<TokenId> ref, std::size_t prompt_len, std::size_t wrong_at = SIZE_MAX)
      : ref_(std::move(ref)), prompt_len_(prompt_len), wrong_at_(wrong_at) {}
  const TapSet* taps() const override { return nullptr; }
  void on_prefill(std::span<const TokenId>, const Tensor&) override {}
  DraftBlock draft(TokenId, std::size_t anchor_pos, std::size_t block_size, const DraftMode&) override {
    DraftBlock b;
    b.anchor_pos = anchor_pos;
    for (std::size_t k = 1; k < block_size; ++k) {
      const std::size_t i = anchor_pos - prompt_len_ + k;
      TokenId t = i < ref_.size() ? ref_[i] : 0;
      if (k == wrong_at_) t = static_cast<TokenId>((t + 1) % 56);
      b.tokens.push_back(t);
    }
    return b;
  }
  void on_commit(std::span<const TokenId> tokens, const Tensor&) override { committed += tokens.size(); }
  std::size_t committed = 0;

 private:
  std::vector<TokenId> ref_;
  std::size_t prompt_len_, wrong_at_;
};

}  // namespace blockspec::testing
