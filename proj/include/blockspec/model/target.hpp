// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "blockspec/core/rng.hpp"
#include "blockspec/corpus/vocab.hpp"
#include "blockspec/model/checkpoint.hpp"
#include "blockspec/model/config.hpp"
#include "blockspec/model/sampling.hpp"
#include "blockspec/numkernel/adamw.hpp"
#include "blockspec/numkernel/ops.hpp"

namespace blockspec {

/// Per-layer rotary keys and values for the committed prefix of one session.
template <typename T>
class TargetKVCache {
 public:
  explicit TargetKVCache(const TargetConfig& cfg)
      : d_(static_cast<std::size_t>(cfg.d_model)),
        max_seq_(static_cast<std::size_t>(cfg.max_seq)),
        k_(static_cast<std::size_t>(cfg.n_layers), std::vector<T>(max_seq_ * d_, T(0))),
        v_(static_cast<std::size_t>(cfg.n_layers), std::vector<T>(max_seq_ * d_, T(0))) {}

  std::size_t committed_len() const { return committed_; }
  std::size_t max_seq() const { return max_seq_; }
  std::size_t n_layers() const { return k_.size(); }
  std::size_t width() const { return d_; }

  const T* keys(std::size_t layer) const { return k_.at(layer).data(); }
  const T* values(std::size_t layer) const { return v_.at(layer).data(); }
  std::span<const T> key_buffer(std::size_t layer) const { return k_.at(layer); }
  std::span<const T> value_buffer(std::size_t layer) const { return v_.at(layer); }

  /// Drops every row at or after `n` and zeroes it.
  void truncate(std::size_t n) {
    BLOCKSPEC_CHECK(n <= committed_, ContractError,
                    "cache truncate to " + std::to_string(n) + " beyond committed " + std::to_string(committed_));
    for (std::size_t l = 0; l < k_.size(); ++l) {
      std::fill(k_[l].begin() + static_cast<std::ptrdiff_t>(n * d_),
                k_[l].begin() + static_cast<std::ptrdiff_t>(committed_ * d_), T(0));
      std::fill(v_[l].begin() + static_cast<std::ptrdiff_t>(n * d_),
                v_[l].begin() + static_cast<std::ptrdiff_t>(committed_ * d_), T(0));
    }
    committed_ = n;
  }

  void reset() { truncate(0); }

  // Used by the forward pass: rows are written at committed_len, then committed.
  void write(std::size_t layer, std::span<const T> k, std::span<const T> v) {
    std::copy(k.begin(), k.end(), k_[layer].begin() + static_cast<std::ptrdiff_t>(committed_ * d_));
    std::copy(v.begin(), v.end(), v_[layer].begin() + static_cast<std::ptrdiff_t>(committed_ * d_));
  }
  void commit(std::size_t rows) { committed_ += rows; }

 private:
  std::size_t d_, max_seq_;
  std::vector<std::vector<T>> k_, v_;
  std::size_t committed_ = 0;
};

template <typename T>
struct TargetLayer {
  BasicTensor<T> attn_norm, wq, wk, wv, wo;
  BasicTensor<T> mlp_norm, w_gate, w_up, w_down;
};

template <typename T>
struct TargetOutput {
  BasicTensor<T> logits;  // [n, vocab]
  BasicTensor<T> taps;    // [n, n_feat * d_model]; row = concat of tap-layer outputs in tap order
};

/// Decoder-only transformer: RMSNorm, rotary MHA, SwiGLU MLP, untied head.
template <typename T>
class TargetModel {
 public:
  TargetModel(TargetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    PhiloxEngine rng(seed, RngStream::kInit);
    const auto d = static_cast<std::size_t>(cfg_.d_model), f = static_cast<std::size_t>(cfg_.d_ff);
    const auto v = static_cast<std::size_t>(cfg_.vocab_size);
    const double s = 0.02, s_out = 0.02 / std::sqrt(2.0 * cfg_.n_layers);
    tok_emb_ = normal({v, d}, s, rng);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      TargetLayer<T> L;
      L.attn_norm = BasicTensor<T>({d}, T(1));
      L.wq = normal({d, d}, s, rng);
      L.wk = normal({d, d}, s, rng);
      L.wv = normal({d, d}, s, rng);
      L.wo = normal({d, d}, s_out, rng);
      L.mlp_norm = BasicTensor<T>({d}, T(1));
      L.w_gate = normal({d, f}, s, rng);
      L.w_up = normal({d, f}, s, rng);
      L.w_down = normal({f, d}, s_out, rng);
      layers_.push_back(std::move(L));
    }
    final_norm_ = BasicTensor<T>({d}, T(1));
    lm_head_ = normal({d, v}, s, rng);
    set_trainable(true);
  }

  const TargetConfig& config() const { return cfg_; }
  Vocab vocab() const { return Vocab{cfg_.vocab_size}; }
  const BasicTensor<T>& tok_emb() const { return tok_emb_; }
  const BasicTensor<T>& lm_head() const { return lm_head_; }

  ParamList<T> params() const {
    ParamList<T> p{{"tok_emb", tok_emb_}};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      const auto& L = layers_[l];
      p.push_back({pre + "attn_norm", L.attn_norm});
      p.push_back({pre + "wq", L.wq});
      p.push_back({pre + "wk", L.wk});
      p.push_back({pre + "wv", L.wv});
      p.push_back({pre + "wo", L.wo});
      p.push_back({pre + "mlp_norm", L.mlp_norm});
      p.push_back({pre + "w_gate", L.w_gate});
      p.push_back({pre + "w_up", L.w_up});
      p.push_back({pre + "w_down", L.w_down});
    }
    p.push_back({"final_norm", final_norm_});
    p.push_back({"lm_head", lm_head_});
    return p;
  }

  void set_trainable(bool on) {
    for (auto& np : params()) {
      auto t = np.tensor;
      t.set_requires_grad(on);
      if (!on) t.clear_grad();
    }
  }

  /// Inference forward over `tokens` appended to the cache's committed prefix.
  /// Never records a tape; extends the cache by tokens.size().
  TargetOutput<T> forward(std::span<const TokenId> tokens, TargetKVCache<T>& cache,
                          const TapSet* taps = nullptr) const {
    NoGradGuard ng;
    BLOCKSPEC_CHECK(cache.n_layers() == layers_.size() && cache.width() == static_cast<std::size_t>(cfg_.d_model),
                    ContractError, "target cache does not match model shape");
    BLOCKSPEC_CHECK(cache.committed_len() + tokens.size() <= static_cast<std::size_t>(cfg_.max_seq), ContractError,
                    "target forward overflows max_seq (" + std::to_string(cache.committed_len()) + " + " +
                        std::to_string(tokens.size()) + " > " + std::to_string(cfg_.max_seq) + ")");
    if (taps) taps->validate(cfg_.n_layers);
    std::vector<BasicTensor<T>> tapped;
    auto out = run(tokens, &cache, [&](int layer, const BasicTensor<T>& h) {
      if (taps && taps->contains(layer)) tapped.push_back(h);
    });
    cache.commit(tokens.size());
    TargetOutput<T> res{std::move(out), {}};
    if (taps) res.taps = concat_cols(tapped);
    return res;
  }

  /// Uncached causal forward from position 0 (records a tape when grad is on).
  BasicTensor<T> forward_full(std::span<const TokenId> tokens) const {
    return run(tokens, nullptr, [](int, const BasicTensor<T>&) {});
  }

  /// Uncached forward returning each block's residual output (index 0 = block 1).
  std::vector<BasicTensor<T>> layer_outputs(std::span<const TokenId> tokens) const {
    NoGradGuard ng;
    std::vector<BasicTensor<T>> outs;
    run(tokens, nullptr, [&](int, const BasicTensor<T>& h) { outs.push_back(h); });
    return outs;
  }

  /// Sum of next-token cross-entropy over response positions, divided by `normalizer`.
  BasicTensor<T> response_loss(std::span<const TokenId> prompt, std::span<const TokenId> response,
                               T normalizer) const {
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), response.begin(), response.end());
    BLOCKSPEC_CHECK(seq.size() >= 2, ContractError, "response_loss: sequence too short");
    BLOCKSPEC_CHECK(seq.size() - 1 <= static_cast<std::size_t>(cfg_.max_seq), ContractError,
                    "response_loss: sequence exceeds max_seq");
    std::span<const TokenId> inputs(seq.data(), seq.size() - 1);
    std::vector<std::int32_t> labels(inputs.size(), -1);
    for (std::size_t i = prompt.size(); i < seq.size(); ++i) labels[i - 1] = seq[i];
    std::vector<T> w(labels.size(), T(1));
    return ops::cross_entropy(forward_full(inputs), std::span<const std::int32_t>(labels),
                              std::span<const T>(w), normalizer);
  }

  /// FNV-1a over config and f32 parameter bytes; stable across save/load.
  std::string hash() const { return content_hash(nlohmann::json(cfg_), records()); }

  void save(const std::string& path) const {
    Container c;
    c.kind = "target";
    c.config = nlohmann::json(cfg_);
    c.meta = {{"hash", hash()}};
    c.tensors = records();
    write_container(path, c);
  }

  static TargetModel load(const std::string& path) {
    const Container c = read_container(path);
    BLOCKSPEC_CHECK(c.kind == "target", ConfigError, path + ": expected a target checkpoint, found '" + c.kind + "'");
    TargetModel m(c.config.get<TargetConfig>(), 0);
    for (auto& np : m.params()) {
      const auto& r = c.find(np.name);
      BLOCKSPEC_CHECK(r.shape == np.tensor.shape(), ConfigError, path + ": shape mismatch for " + np.name);
      auto t = np.tensor;
      auto src = from_f32<T>(r.data);
      std::copy(src.begin(), src.end(), t.data().begin());
    }
    m.set_trainable(false);
    return m;
  }

  /// Same parameters in another precision.
  template <typename U>
  TargetModel<U> cast() const {
    TargetModel<U> m(cfg_, 0);
    auto src = params();
    auto dst = m.params();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto t = dst[i].tensor;
      for (std::size_t j = 0; j < t.numel(); ++j) t.data()[j] = static_cast<U>(src[i].tensor.data()[j]);
    }
    return m;
  }

  std::vector<TensorRecord> records() const {
    std::vector<TensorRecord> out;
    for (const auto& np : params())
      out.push_back({np.name, np.tensor.shape(), to_f32<T>(np.tensor.data())});
    return out;
  }

 private:
  static BasicTensor<T> normal(Shape shape, double stddev, PhiloxEngine& rng) {
    BasicTensor<T> t(std::move(shape));
    for (auto& x : t.data()) x = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  static BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
    const std::size_t n = parts.at(0).rows(), d = parts[0].cols();
    BasicTensor<T> out({n, d * parts.size()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < parts.size(); ++p)
        std::copy_n(parts[p].ptr() + i * d, d, out.ptr() + i * d * parts.size() + p * d);
    return out;
  }

  template <typename Capture>
  BasicTensor<T> run(std::span<const TokenId> tokens, TargetKVCache<T>* cache, Capture&& capture) const {
    BLOCKSPEC_CHECK(!tokens.empty(), ContractError, "target forward on empty token list");
    const Vocab voc = vocab();
    for (TokenId t : tokens)
      BLOCKSPEC_CHECK(voc.valid(t), ContractError, "token id " + std::to_string(t) + " out of range");
    const std::size_t n = tokens.size(), start = cache ? cache->committed_len() : 0;
    const std::size_t heads = static_cast<std::size_t>(cfg_.n_heads);
    const T eps = static_cast<T>(cfg_.norm_eps);
    std::vector<std::int64_t> pos(n);
    std::iota(pos.begin(), pos.end(), static_cast<std::int64_t>(start));
    const AttentionMask mask = AttentionMask::causal(n, start + n, start);
    BasicTensor<T> h = ops::embedding_lookup(tok_emb_, tokens);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      auto x = ops::rmsnorm(h, L.attn_norm, eps);
      auto q = ops::rope_apply(ops::matmul(x, L.wq), std::span<const std::int64_t>(pos), heads, cfg_.rope_theta);
      auto k = ops::rope_apply(ops::matmul(x, L.wk), std::span<const std::int64_t>(pos), heads, cfg_.rope_theta);
      auto v = ops::matmul(x, L.wv);
      KvPrefix<T> prefix;
      if (cache) prefix = {cache->keys(l), cache->values(l), start};
      auto a = ops::masked_attention(q, k, v, mask, heads, prefix);
      if (cache) cache->write(l, k.data(), v.data());
      h = ops::add(h, ops::matmul(a, L.wo));
      h = ops::add(h, ops::silu_mlp(ops::rmsnorm(h, L.mlp_norm, eps), L.w_gate, L.w_up, L.w_down));
      capture(static_cast<int>(l) + 1, h);
    }
    auto logits = ops::matmul(ops::rmsnorm(h, final_norm_, eps), lm_head_);
    const std::int32_t masked[] = {voc.mask(), voc.pad()};
    return ops::fill_columns(logits, std::span<const std::int32_t>(masked),
                             -std::numeric_limits<T>::infinity());
  }

  TargetConfig cfg_;
  BasicTensor<T> tok_emb_;
  std::vector<TargetLayer<T>> layers_;
  BasicTensor<T> final_norm_;
  BasicTensor<T> lm_head_;
};

struct DecodeOptions {
  std::size_t max_new = 64;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

struct ArResult {
  std::vector<TokenId> tokens;  // generated tokens only
  double prefill_ms = 0.0;
  double decode_ms = 0.0;  // everything after the prefill
};

/// Picks the token at absolute position `pos` from one logit row.
template <typename T>
TokenId pick_token(std::span<const T> row, double temperature, std::uint64_t seed, std::size_t pos) {
  BLOCKSPEC_CHECK(temperature >= 0.0, ContractError, "temperature must be >= 0");
  if (temperature == 0.0) return argmax(row);
  const auto p = softmax_probs(row, temperature);
  return sample_categorical(p, CounterRng::uniform(seed, RngStream::kSample, pos));
}

/// Token-by-token decoding with a KV cache; stops after EOS or max_new tokens.
template <typename T>
ArResult ar_decode_timed(const TargetModel<T>& model, std::span<const TokenId> prompt, const DecodeOptions& opt) {
  using Clock = std::chrono::steady_clock;
  BLOCKSPEC_CHECK(!prompt.empty(), ContractError, "ar_decode: empty prompt");
  const Vocab voc = model.vocab();
  ArResult res;
  TargetKVCache<T> cache(model.config());
  const std::size_t limit = std::min(opt.max_new, static_cast<std::size_t>(model.config().max_seq) - prompt.size());
  auto t0 = Clock::now();
  auto out = model.forward(prompt, cache);
  auto t1 = Clock::now();
  res.prefill_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::size_t pos = prompt.size();
  auto row = out.logits.data().subspan((out.logits.rows() - 1) * out.logits.cols(), out.logits.cols());
  TokenId tok = pick_token<T>(row, opt.temperature, opt.seed, pos);
  while (true) {
    if (res.tokens.size() >= limit) break;
    res.tokens.push_back(tok);
    if (tok == voc.eos() || res.tokens.size() >= limit) break;
    const TokenId in[1] = {tok};
    out = model.forward(std::span<const TokenId>(in), cache);
    ++pos;
    tok = pick_token<T>(std::span<const T>(out.logits.data()), opt.temperature, opt.seed, pos);
  }
  res.decode_ms = std::chrono::duration<double, std::milli>(Clock::now() - t1).count();
  return res;
}

template <typename T>
std::vector<TokenId> ar_decode(const TargetModel<T>& model, std::span<const TokenId> prompt,
                               const DecodeOptions& opt) {
  return ar_decode_timed(model, prompt, opt).tokens;
}

}  // namespace blockspec
