// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <memory>
#include <span>
#include <vector>

#include "blockspec/model/draft.hpp"

namespace blockspec {

/// Drafter side of one decode session. The engine calls on_prefill once, then
/// alternates draft / on_commit. on_commit receives the tokens whose target
/// features became final in the last verification (the anchor and the
/// accepted drafts) together with their tap rows.
template <typename T>
class DraftSession {
 public:
  virtual ~DraftSession() = default;

  /// Tap layers the target must expose, or nullptr if none are needed.
  virtual const TapSet* taps() const = 0;
  virtual void on_prefill(std::span<const TokenId> prompt, const BasicTensor<T>& taps) = 0;
  virtual DraftBlock draft(TokenId anchor, std::size_t anchor_pos, std::size_t block_size, const DraftMode& mode) = 0;
  virtual void on_commit(std::span<const TokenId> tokens, const BasicTensor<T>& taps) = 0;

  double fuse_ms() const { return fuse_ms_; }

 protected:
  double fuse_ms_ = 0;
};

/// Context-conditioned drafting: target features are fused and injected into
/// the drafter cache; the cache covers every position before the anchor.
template <typename T>
class ConditionedDraftSession : public DraftSession<T> {
 public:
  explicit ConditionedDraftSession(const DraftModel<T>& m) : model_(m), cache_(m.make_cache()) {
    BLOCKSPEC_CHECK(m.config().conditioning, ContractError, "conditioned session needs a conditioned drafter");
  }

  const TapSet* taps() const override { return &model_.taps(); }

  void on_prefill(std::span<const TokenId>, const BasicTensor<T>& taps) override {
    cache_.truncate(0);
    inject(taps);
  }

  DraftBlock draft(TokenId anchor, std::size_t anchor_pos, std::size_t block_size, const DraftMode& mode) override {
    return model_.draft_block(anchor, anchor_pos, cache_, block_size, mode);
  }

  void on_commit(std::span<const TokenId>, const BasicTensor<T>& taps) override { inject(taps); }

  const DraftKVCache<T>& cache() const { return cache_; }

 private:
  void inject(const BasicTensor<T>& taps) {
    const auto t0 = std::chrono::steady_clock::now();
    model_.inject(cache_, taps);
    this->fuse_ms_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }

  const DraftModel<T>& model_;
  DraftKVCache<T> cache_;
};

/// Drafting without target features: the drafter keeps its own causal cache
/// of the accepted prefix; newly accepted tokens ride along in the next draft
/// forward.
template <typename T>
class UnconditionedDraftSession : public DraftSession<T> {
 public:
  explicit UnconditionedDraftSession(const DraftModel<T>& m) : model_(m), cache_(m.make_cache()) {
    BLOCKSPEC_CHECK(!m.config().conditioning, ContractError, "unconditioned session needs an unconditioned drafter");
  }

  const TapSet* taps() const override { return nullptr; }

  void on_prefill(std::span<const TokenId> prompt, const BasicTensor<T>&) override {
    cache_.truncate(0);
    pending_.assign(prompt.begin(), prompt.end());
  }

  DraftBlock draft(TokenId anchor, std::size_t anchor_pos, std::size_t block_size, const DraftMode& mode) override {
    auto blk = model_.draft_block(anchor, anchor_pos, cache_, block_size, mode, pending_);
    pending_.clear();
    return blk;
  }

  void on_commit(std::span<const TokenId> tokens, const BasicTensor<T>&) override {
    pending_.insert(pending_.end(), tokens.begin(), tokens.end());
  }

 private:
  const DraftModel<T>& model_;
  DraftKVCache<T> cache_;
  std::vector<TokenId> pending_;
};

template <typename T>
std::unique_ptr<DraftSession<T>> make_session(const DraftModel<T>& m) {
  if (m.config().conditioning) return std::make_unique<ConditionedDraftSession<T>>(m);
  return std::make_unique<UnconditionedDraftSession<T>>(m);
}

}  // namespace blockspec
