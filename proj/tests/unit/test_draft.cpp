// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "blockspec/model/draft.hpp"
#include "support/gradcheck.hpp"

namespace blockspec {
namespace {

TargetConfig target_config() {
  TargetConfig c;
  c.n_layers = 6;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 64;
  c.max_seq = 128;
  return c;
}

DraftConfig draft_config(bool conditioning = true) {
  DraftConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 64;
  c.block_size = 8;
  c.n_feat = 3;
  c.conditioning = conditioning;
  return c;
}

std::vector<TokenId> some_tokens(std::size_t n, std::uint64_t seed) {
  PhiloxEngine rng(seed, RngStream::kData);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(56));
  return t;
}

/// Prefill the target over `prompt` and inject its taps into a fresh drafter cache.
DraftKVCache<float> prefilled_cache(const TargetModel<float>& t, const DraftModel<float>& d,
                                    std::span<const TokenId> prompt) {
  TargetKVCache<float> tc(t.config());
  auto out = t.forward(prompt, tc, &d.taps());
  auto cache = d.make_cache();
  d.inject(cache, out.taps);
  return cache;
}

TEST(Fusion, ZeroInputGivesBias) {
  PhiloxEngine rng(1, RngStream::kInit);
  auto p = FusionParams<float>::init(640, 64, rng);
  for (std::size_t i = 0; i < 64; ++i) p.bias.data()[i] = 0.1f * static_cast<float>(i);
  auto f = fuse(Tensor({3, 640}, 0.0f), p);
  EXPECT_EQ(f.shape(), (Shape{3, 64}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 64; ++j) EXPECT_FLOAT_EQ(f.at(r, j), 0.1f * static_cast<float>(j));
}

TEST(Fusion, WidthMismatchIsDimensionError) {
  PhiloxEngine rng(1, RngStream::kInit);
  auto p = FusionParams<float>::init(640, 64, rng);
  EXPECT_EQ(p.in_width(), 640u);
  EXPECT_EQ(p.out_width(), 64u);
  EXPECT_THROW(fuse(Tensor({2, 512}), p), DimensionError);
}

TEST(Fusion, ProjectionIsIdempotent) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto fused = testing::random_tensor<float>({5, 32}, 3, 1.0, false);
  std::vector<std::int64_t> pos{0, 1, 2, 3, 4};
  auto a = d.context_kv(1, fused, pos);
  auto b = d.context_kv(1, fused, pos);
  EXPECT_EQ(std::memcmp(a.key.ptr(), b.key.ptr(), a.key.numel() * 4), 0);
  EXPECT_EQ(std::memcmp(a.value.ptr(), b.value.ptr(), a.value.numel() * 4), 0);
  EXPECT_EQ(a.key.shape(), (Shape{5, 32}));
}

TEST(DraftCache, EntryCountAfterPrefillEqualsPromptLength) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto prompt = some_tokens(9, 3);
  auto cache = prefilled_cache(t, d, prompt);
  EXPECT_EQ(cache.committed_len(), 9u);
  EXPECT_EQ(cache.n_layers(), 2u);
}

TEST(DraftCache, TruncateAndReappendIsBitwiseEqual) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto seq = some_tokens(14, 4);
  TargetKVCache<float> tc(t.config());
  auto taps = t.forward(seq, tc, &d.taps()).taps;
  auto cache = d.make_cache();
  d.inject(cache, taps);
  std::vector<float> k0(cache.key_buffer(0).begin(), cache.key_buffer(0).end());
  std::vector<float> v1(cache.value_buffer(1).begin(), cache.value_buffer(1).end());
  cache.truncate(6);
  NoGradGuard ng;
  d.inject(cache, ops::slice_rows(taps, 6, 14));
  EXPECT_TRUE(std::equal(k0.begin(), k0.end(), cache.key_buffer(0).begin()));
  EXPECT_TRUE(std::equal(v1.begin(), v1.end(), cache.value_buffer(1).begin()));
}

TEST(DraftBlock, OneForwardPerCallForAnyBlockSize) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto prompt = some_tokens(10, 5);
  for (std::size_t B : {8u, 16u, 32u}) {
    auto cache = prefilled_cache(t, d, prompt);
    const auto before = d.forward_count();
    auto blk = d.draft_block(3, 10, cache, B, DraftMode::greedy());
    EXPECT_EQ(d.forward_count(), before + 1);
    EXPECT_EQ(blk.tokens.size(), B - 1);
    EXPECT_EQ(cache.committed_len(), 10u);
  }
}

TEST(DraftBlock, SampledDistributionsAreValidAndMaskFree) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto prompt = some_tokens(6, 6);
  auto cache = prefilled_cache(t, d, prompt);
  auto blk = d.draft_block(7, 6, cache, 8, DraftMode::sampled(1.0, 11));
  ASSERT_EQ(blk.q.size(), 7u);
  for (std::size_t k = 0; k < 7; ++k) {
    double s = 0;
    for (double p : blk.q[k]) s += p;
    EXPECT_NEAR(s, 1.0, 1e-5);
    EXPECT_EQ(blk.q[k][63], 0.0);
    EXPECT_EQ(blk.q[k][60], 0.0);
    EXPECT_GT(blk.q[k][static_cast<std::size_t>(blk.tokens[k])], 0.0);
  }
}

TEST(DraftBlock, GreedyNeverProposesMask) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto prompt = some_tokens(5, s);
    auto cache = prefilled_cache(t, d, prompt);
    for (TokenId tok : d.draft_block(prompt[0], 5, cache, 8, DraftMode::greedy()).tokens) {
      EXPECT_NE(tok, 63);
      EXPECT_NE(tok, 60);
    }
  }
}

TEST(DraftBlock, AnchorPositionMismatchIsContractError) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto prompt = some_tokens(6, 6);
  auto cache = prefilled_cache(t, d, prompt);
  EXPECT_THROW(d.draft_block(1, 7, cache, 8, DraftMode::greedy()), ContractError);
  EXPECT_THROW(d.draft_block(1, 5, cache, 8, DraftMode::greedy()), ContractError);
  EXPECT_THROW(d.draft_block(63, 6, cache, 8, DraftMode::greedy()), ContractError);
  const TokenId pend[] = {1};
  EXPECT_THROW(d.draft_block(1, 7, cache, 8, DraftMode::greedy(), pend), ContractError);
}

TEST(DraftBlock, SlotsArePermutationEquivariantWithoutRope) {
  auto cfg = draft_config();
  cfg.use_rope = false;
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(cfg, t, 2);
  auto prompt = some_tokens(7, 8);
  auto cache = prefilled_cache(t, d, prompt);
  NoGradGuard ng;
  // Block with distinct slot contents: anchor, two real tokens, rest MASK.
  std::vector<TokenId> toks{5, 9, 12, 63, 63, 63, 63, 63};
  std::vector<TokenId> perm{5, 12, 9, 63, 63, 63, 63, 63};
  std::vector<std::int64_t> pos(8, 7);
  AttentionMask mask = AttentionMask::full(8, 7 + 8);
  DraftContext<float> ctx{&cache, {}, {}};
  auto h1 = d.hidden(ctx, d.input_rows(toks), pos, mask);
  auto h2 = d.hidden(ctx, d.input_rows(perm), pos, mask);
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_NEAR(h1.at(1, j), h2.at(2, j), 1e-5);
    EXPECT_NEAR(h1.at(2, j), h2.at(1, j), 1e-5);
    EXPECT_NEAR(h1.at(5, j), h2.at(5, j), 1e-5);
  }
}

TEST(DraftBlock, LaterContextEntriesAreInvisible) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  auto seq = some_tokens(12, 9);
  auto cache = prefilled_cache(t, d, seq);
  // Rigged cache holding entries past the anchor: a block anchored at 8 sees
  // entries < 8 only, so editing entry 10 changes nothing.
  NoGradGuard ng;
  std::vector<TokenId> toks{4, 63, 63, 63, 63, 63, 63, 63};
  std::vector<std::int64_t> pos{8, 9, 10, 11, 12, 13, 14, 15};
  AttentionMask mask(8, 12 + 8);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t c = 0; c < 8; ++c) mask.set(i, c, true);
    for (std::size_t c = 12; c < 20; ++c) mask.set(i, c, true);
  }
  DraftContext<float> ctx{&cache, {}, {}};
  auto before = d.hidden(ctx, d.input_rows(toks), pos, mask);
  std::vector<float> junk(32, 7.5f);
  for (std::size_t l = 0; l < 2; ++l) cache.overwrite(l, 10, junk, junk);
  auto after = d.hidden(ctx, d.input_rows(toks), pos, mask);
  EXPECT_EQ(std::memcmp(before.ptr(), after.ptr(), before.numel() * 4), 0);
}

TEST(DraftHead, WidthMismatchIsDimensionError) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  EXPECT_THROW(d.logits_head(Tensor({2, 16})), DimensionError);
  auto cfg = draft_config();
  cfg.d_model = 64;
  cfg.n_heads = 4;
  EXPECT_THROW((DraftModel<float>(cfg, t, 1)), ConfigError);
}

TEST(DraftHead, SharedWeightsAreFrozenCopies) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  EXPECT_FALSE(d.lm_head().requires_grad());
  EXPECT_FALSE(d.tok_emb().requires_grad());
  EXPECT_EQ(std::memcmp(d.lm_head().ptr(), t.lm_head().ptr(), t.lm_head().numel() * 4), 0);
  for (const auto& p : d.params()) {
    EXPECT_NE(p.name, "lm_head");
    EXPECT_NE(p.name, "tok_emb");
  }
}

TEST(Unconditioned, RejectsContextInputs) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(false), t, 2);
  auto cache = d.make_cache();
  EXPECT_THROW(d.inject(cache, Tensor({2, 96})), ContractError);
  EXPECT_TRUE(d.taps().layers.empty());
  for (const auto& p : d.params()) EXPECT_EQ(p.name.rfind("fusion", 0), std::string::npos);
}

TEST(Unconditioned, PendingTokensEnterTheCache) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(false), t, 2);
  auto prompt = some_tokens(6, 10);
  auto cache = d.make_cache();
  const auto before = d.forward_count();
  auto blk = d.draft_block(3, 6, cache, 8, DraftMode::greedy(), prompt);
  EXPECT_EQ(d.forward_count(), before + 1);
  EXPECT_EQ(cache.committed_len(), 6u);
  EXPECT_EQ(blk.tokens.size(), 7u);
  // Incremental: the same prefix fed in two steps yields the same cache bytes.
  auto cache2 = d.make_cache();
  d.draft_block(prompt[2], 2, cache2, 8, DraftMode::greedy(), std::span<const TokenId>(prompt.data(), 2));
  d.draft_block(3, 6, cache2, 8, DraftMode::greedy(), std::span<const TokenId>(prompt.data() + 2, 4));
  for (std::size_t l = 0; l < 2; ++l)
    EXPECT_TRUE(std::equal(cache.key_buffer(l).begin(), cache.key_buffer(l).end(), cache2.key_buffer(l).begin()));
}

TEST(DraftCheckpoint, RoundTripAndHashBinding) {
  TargetModel<float> t(target_config(), 1);
  DraftModel<float> d(draft_config(), t, 2);
  const auto path = (std::filesystem::temp_directory_path() / "blockspec_draft.ckpt").string();
  d.save(path);
  auto back = DraftModel<float>::load(path, t);
  EXPECT_EQ(back.hash(), d.hash());
  EXPECT_EQ(back.config(), d.config());
  TargetModel<float> other(target_config(), 99);
  try {
    DraftModel<float>::load(path, other);
    FAIL() << "expected a hash mismatch";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("hash mismatch"), std::string::npos);
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace blockspec
