// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "blockspec/corpus/distill.hpp"
#include "blockspec/model/target.hpp"
#include "blockspec/train/target_trainer.hpp"

namespace blockspec {
namespace {

TargetConfig small_config() {
  TargetConfig c;
  c.n_layers = 12;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 64;
  c.max_seq = 96;
  return c;
}

std::vector<TokenId> some_tokens(std::size_t n, std::uint64_t seed) {
  PhiloxEngine rng(seed, RngStream::kData);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(56));
  return t;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isinf(a[i]) && a[i] == b[i]) continue;
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

TEST(TapLayers, SelectionExamples) {
  EXPECT_EQ(select_tap_layers(12, 5).layers, (std::vector<int>{2, 4, 6, 8, 10}));
  EXPECT_EQ(select_tap_layers(12, 3).layers, (std::vector<int>{2, 6, 10}));
  EXPECT_EQ(select_tap_layers(12, 1).layers, (std::vector<int>{6}));
  EXPECT_EQ(select_tap_layers(4, 1).layers, (std::vector<int>{2}));
}

TEST(TapLayers, BoundsAreConfigErrors) {
  EXPECT_THROW(select_tap_layers(3, 1), ConfigError);
  EXPECT_THROW(select_tap_layers(12, 0), ConfigError);
  EXPECT_THROW(select_tap_layers(12, 10), ConfigError);
  EXPECT_NO_THROW(select_tap_layers(12, 9));
  EXPECT_THROW((TapSet{{1, 4}}.validate(12)), ConfigError);
  EXPECT_THROW((TapSet{{4, 4}}.validate(12)), ConfigError);
  EXPECT_THROW((TapSet{{11}}.validate(12)), ConfigError);
}

TEST(TapLayers, SelectionIsAlwaysValid) {
  for (int n = 4; n <= 24; ++n)
    for (int f = 1; f <= n - 3; ++f) EXPECT_NO_THROW(select_tap_layers(n, f).validate(n)) << n << "," << f;
}

TEST(TargetConfig, Validation) {
  TargetConfig c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.n_layers = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TargetForward, PrefillShapes) {
  TargetModel<float> m(small_config(), 1);
  TargetKVCache<float> cache(m.config());
  auto toks = some_tokens(7, 2);
  const TapSet taps = select_tap_layers(12, 3);
  auto out = m.forward(toks, cache, &taps);
  EXPECT_EQ(out.logits.shape(), (Shape{7, 64}));
  EXPECT_EQ(out.taps.shape(), (Shape{7, 3 * 32}));
  EXPECT_EQ(cache.committed_len(), 7u);
}

TEST(TargetForward, MaskAndPadLogitsAreMinusInfinity) {
  TargetModel<float> m(small_config(), 1);
  TargetKVCache<float> cache(m.config());
  auto out = m.forward(some_tokens(5, 3), cache);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_TRUE(std::isinf(out.logits.at(i, 63)));
    EXPECT_TRUE(std::isinf(out.logits.at(i, 60)));
    EXPECT_TRUE(std::isfinite(out.logits.at(i, 0)));
  }
}

TEST(TargetForward, IncrementalEqualsSingleCall) {
  TargetModel<float> m(small_config(), 4);
  auto toks = some_tokens(2, 5);
  TargetKVCache<float> a(m.config()), b(m.config());
  auto both = m.forward(toks, a);
  auto first = m.forward(std::span<const TokenId>(toks.data(), 1), b);
  auto second = m.forward(std::span<const TokenId>(toks.data() + 1, 1), b);
  EXPECT_LE(max_abs_diff(first.logits.data(), both.logits.data().subspan(0, 64)), 1e-5);
  EXPECT_LE(max_abs_diff(second.logits.data(), both.logits.data().subspan(64, 64)), 1e-5);
}

TEST(TargetForward, CachedDecodingMatchesFullForwardEveryStep) {
  TargetModel<float> m(small_config(), 6);
  auto toks = some_tokens(40, 7);
  auto full = m.forward_full(toks);
  TargetKVCache<float> cache(m.config());
  m.forward(std::span<const TokenId>(toks.data(), 5), cache);
  for (std::size_t i = 5; i < toks.size(); ++i) {
    auto step = m.forward(std::span<const TokenId>(toks.data() + i, 1), cache);
    EXPECT_LE(max_abs_diff(step.logits.data(), full.data().subspan(i * 64, 64)), 1e-5) << i;
  }
}

TEST(TargetForward, BlockVerifyIsBitwiseEqualToStepwise) {
  // The kernels are batch-invariant, so a multi-token verify forward reproduces
  // one-token-at-a-time decoding exactly.
  TargetModel<float> m(small_config(), 8);
  auto toks = some_tokens(30, 9);
  TargetKVCache<float> a(m.config()), b(m.config());
  m.forward(std::span<const TokenId>(toks.data(), 10), a);
  m.forward(std::span<const TokenId>(toks.data(), 10), b);
  auto block = m.forward(std::span<const TokenId>(toks.data() + 10, 20), a);
  for (std::size_t i = 10; i < 30; ++i) {
    auto step = m.forward(std::span<const TokenId>(toks.data() + i, 1), b);
    EXPECT_EQ(std::memcmp(step.logits.ptr(), block.logits.ptr() + (i - 10) * 64, 64 * sizeof(float)), 0) << i;
  }
}

TEST(TargetForward, TapsEqualFullForwardLayerOutputs) {
  TargetModel<float> m(small_config(), 10);
  auto toks = some_tokens(12, 11);
  const TapSet taps{{2, 6, 10}};
  auto layers = m.layer_outputs(toks);
  ASSERT_EQ(layers.size(), 12u);
  TargetKVCache<float> cache(m.config());
  auto a = m.forward(std::span<const TokenId>(toks.data(), 4), cache, &taps);
  auto b = m.forward(std::span<const TokenId>(toks.data() + 4, 8), cache, &taps);
  for (std::size_t i = 0; i < 12; ++i) {
    const float* row = i < 4 ? a.taps.ptr() + i * 96 : b.taps.ptr() + (i - 4) * 96;
    for (std::size_t t = 0; t < 3; ++t) {
      const auto& ref = layers[static_cast<std::size_t>(taps.layers[t]) - 1];
      for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(row[t * 32 + j], ref.at(i, j), 1e-5);
    }
  }
}

TEST(TargetForward, TapsDoNotPerturbLogits) {
  TargetModel<float> m(small_config(), 12);
  auto toks = some_tokens(9, 13);
  const TapSet taps = select_tap_layers(12, 5);
  TargetKVCache<float> a(m.config()), b(m.config());
  auto with = m.forward(toks, a, &taps);
  auto without = m.forward(toks, b);
  EXPECT_EQ(std::memcmp(with.logits.ptr(), without.logits.ptr(), with.logits.numel() * sizeof(float)), 0);
}

TEST(TargetCache, TruncateThenReextendIsBitwiseEqual) {
  TargetModel<float> m(small_config(), 14);
  auto toks = some_tokens(20, 15);
  TargetKVCache<float> cache(m.config());
  m.forward(toks, cache);
  std::vector<std::vector<float>> ks, vs;
  for (std::size_t l = 0; l < 12; ++l) {
    ks.emplace_back(cache.key_buffer(l).begin(), cache.key_buffer(l).end());
    vs.emplace_back(cache.value_buffer(l).begin(), cache.value_buffer(l).end());
  }
  cache.truncate(8);
  EXPECT_EQ(cache.committed_len(), 8u);
  m.forward(std::span<const TokenId>(toks.data() + 8, 12), cache);
  for (std::size_t l = 0; l < 12; ++l) {
    EXPECT_TRUE(std::equal(ks[l].begin(), ks[l].end(), cache.key_buffer(l).begin()));
    EXPECT_TRUE(std::equal(vs[l].begin(), vs[l].end(), cache.value_buffer(l).begin()));
  }
  EXPECT_THROW(cache.truncate(21), ContractError);
}

TEST(TargetCache, TruncatedStateEqualsFreshPrefix) {
  TargetModel<float> m(small_config(), 16);
  auto toks = some_tokens(16, 17);
  TargetKVCache<float> a(m.config()), b(m.config());
  m.forward(toks, a);
  a.truncate(6);
  m.forward(std::span<const TokenId>(toks.data(), 6), b);
  for (std::size_t l = 0; l < 12; ++l)
    EXPECT_TRUE(std::equal(a.key_buffer(l).begin(), a.key_buffer(l).end(), b.key_buffer(l).begin()));
}

TEST(TargetForward, OverflowIsContractError) {
  TargetModel<float> m(small_config(), 1);
  TargetKVCache<float> cache(m.config());
  m.forward(some_tokens(90, 1), cache);
  EXPECT_THROW(m.forward(some_tokens(7, 2), cache), ContractError);
  EXPECT_NO_THROW(m.forward(some_tokens(6, 2), cache));
}

TEST(ArDecode, GreedyIsDeterministic) {
  TargetModel<float> m(small_config(), 18);
  auto prompt = some_tokens(6, 19);
  auto a = ar_decode(m, prompt, {20, 0.0, 0});
  auto b = ar_decode(m, prompt, {20, 0.0, 0});
  EXPECT_EQ(a, b);
  EXPECT_LE(a.size(), 20u);
}

TEST(ArDecode, TinyTemperatureEqualsGreedy) {
  TargetModel<float> m(small_config(), 20);
  auto prompt = some_tokens(5, 21);
  EXPECT_EQ(ar_decode(m, prompt, {16, 0.0, 0}), ar_decode(m, prompt, {16, 1e-6, 99}));
}

TEST(ArDecode, SamplingIsSeededAndStopsAtBudget) {
  TargetModel<float> m(small_config(), 22);
  auto prompt = some_tokens(5, 23);
  auto a = ar_decode(m, prompt, {12, 1.0, 5});
  EXPECT_EQ(a, ar_decode(m, prompt, {12, 1.0, 5}));
  EXPECT_NE(a, ar_decode(m, prompt, {12, 1.0, 6}));
  EXPECT_LE(a.size(), 12u);
  EXPECT_THROW(ar_decode(m, prompt, {12, -1.0, 5}), ContractError);
}

TEST(ArDecode, NeverEmitsMask) {
  TargetModel<float> m(small_config(), 24);
  for (std::uint64_t s = 0; s < 5; ++s)
    for (TokenId t : ar_decode(m, some_tokens(4, s), {24, 1.5, s})) {
      EXPECT_NE(t, 63);
      EXPECT_NE(t, 60);
    }
}

TEST(Sampling, ArgmaxPrefersLowestIndexOnTies) {
  const float row[] = {1.f, 3.f, 3.f, 2.f};
  EXPECT_EQ(argmax(std::span<const float>(row)), 1);
}

TEST(Sampling, InverseCdfSkipsZeroMass) {
  const double w[] = {0.0, 0.5, 0.0, 0.5};
  EXPECT_EQ(sample_categorical(w, 0.0), 1);
  EXPECT_EQ(sample_categorical(w, 0.49), 1);
  EXPECT_EQ(sample_categorical(w, 0.5), 3);
  EXPECT_EQ(sample_categorical(w, 0.999999), 3);
  const double none[] = {0.0, 0.0};
  EXPECT_THROW(sample_categorical(none, 0.5), NumericError);
}

TEST(Checkpoint, SaveLoadPreservesHashAndOutputs) {
  TargetModel<float> m(small_config(), 26);
  const auto path = (std::filesystem::temp_directory_path() / "blockspec_target.ckpt").string();
  m.save(path);
  auto back = TargetModel<float>::load(path);
  EXPECT_EQ(back.hash(), m.hash());
  EXPECT_EQ(back.config(), m.config());
  auto prompt = some_tokens(6, 27);
  EXPECT_EQ(ar_decode(back, prompt, {10, 0.0, 0}), ar_decode(m, prompt, {10, 0.0, 0}));
  std::filesystem::remove(path);
}

TEST(Checkpoint, ContainerLayout) {
  const auto path = (std::filesystem::temp_directory_path() / "blockspec_container.bin").string();
  Container c;
  c.kind = "test";
  c.tensors.push_back({"a", {2}, {1.0f, -2.0f}});
  write_container(path, c);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ASSERT_GE(bytes.size(), 24u);
  EXPECT_EQ(std::memcmp(bytes.data(), "BSCKPT01", 8), 0);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  EXPECT_EQ(bytes.size(), 16 + hlen + 8);
  // 1.0f little-endian
  EXPECT_EQ(bytes[16 + hlen + 3], 0x3f);
  EXPECT_EQ(bytes[16 + hlen + 2], 0x80);
  auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
  EXPECT_EQ(header["version"], 1);
  EXPECT_EQ(header["tensors"][0]["offset"], 0);
  auto back = read_container(path);
  EXPECT_EQ(back.find("a").data, (std::vector<float>{1.0f, -2.0f}));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsBadMagicAndVersion) {
  const auto path = (std::filesystem::temp_directory_path() / "blockspec_bad.bin").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT0000000000000000";
  }
  EXPECT_THROW(read_container(path), ConfigError);
  Container c;
  c.kind = "draft";
  write_container(path, c);
  EXPECT_THROW(TargetModel<float>::load(path), ConfigError);
  std::filesystem::remove(path);
}

TEST(TargetTraining, EmptyCorpusIsConfigError) {
  TargetModel<float> m(small_config(), 1);
  EXPECT_THROW(train_target(m, {}, {}), ConfigError);
}

TEST(TargetTraining, LossDropsAndDecodeDoesNotMutate) {
  TargetConfig c = small_config();
  c.n_layers = 4;
  TargetModel<float> m(c, 30);
  auto corpus = gen_task(Task::kModularChain, 31, 64);
  const double before = eval_target_loss(m, corpus);
  TrainTargetConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  auto logs = train_target(m, corpus, tc);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_LT(eval_target_loss(m, corpus), before);
  const auto h = m.hash();
  ar_decode(m, corpus[0].prompt, {8, 0.0, 0});
  ar_decode(m, corpus[1].prompt, {8, 1.0, 3});
  EXPECT_EQ(m.hash(), h);
}

TEST(Distill, ResponsesAreGreedyContinuations) {
  TargetConfig c = small_config();
  c.n_layers = 4;
  TargetModel<float> m(c, 32);
  auto corpus = gen_task(Task::kCopyRepeat, 33, 12);
  auto d = distill_responses(corpus, m, 10);
  auto again = distill_responses(corpus, m, 10);
  EXPECT_EQ(d, again);
  for (const auto& s : d) {
    EXPECT_LE(s.response.size(), 10u);
    // replaying through the target reproduces every token under argmax
    std::vector<TokenId> seq = s.sequence();
    auto logits = m.forward_full(std::span<const TokenId>(seq.data(), seq.size() - 1));
    for (std::size_t i = s.prompt.size(); i < seq.size(); ++i)
      EXPECT_EQ(argmax(std::span<const float>(logits.ptr() + (i - 1) * 64, 64)), seq[i]);
  }
}

}  // namespace
}  // namespace blockspec
