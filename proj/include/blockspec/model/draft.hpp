// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockspec/model/fusion.hpp"
#include "blockspec/model/target.hpp"

namespace blockspec {

/// Persistent drafter context: per-layer keys/values for positions
/// 0..committed_len-1. Holds injected target context (conditioned mode) or the
/// drafter's own causal token keys/values (unconditioned mode); never block slots.
template <typename T>
class DraftKVCache {
 public:
  DraftKVCache(std::size_t n_layers, std::size_t width, std::size_t max_seq)
      : d_(width), max_seq_(max_seq), k_(n_layers, std::vector<T>(max_seq * width, T(0))),
        v_(n_layers, std::vector<T>(max_seq * width, T(0))) {}

  std::size_t committed_len() const { return committed_; }
  std::size_t n_layers() const { return k_.size(); }
  std::size_t width() const { return d_; }
  std::size_t max_seq() const { return max_seq_; }
  std::span<const T> key_buffer(std::size_t l) const { return k_.at(l); }
  std::span<const T> value_buffer(std::size_t l) const { return v_.at(l); }

  KvPrefix<T> prefix(std::size_t l) const { return {k_[l].data(), v_[l].data(), committed_}; }

  /// Writes `rows` rows for layer l at committed_len (call commit afterwards).
  void write(std::size_t l, std::span<const T> k, std::span<const T> v) {
    BLOCKSPEC_CHECK(k.size() == v.size() && committed_ * d_ + k.size() <= max_seq_ * d_, ContractError,
                    "draft cache overflow");
    std::copy(k.begin(), k.end(), k_[l].begin() + static_cast<std::ptrdiff_t>(committed_ * d_));
    std::copy(v.begin(), v.end(), v_[l].begin() + static_cast<std::ptrdiff_t>(committed_ * d_));
  }
  void commit(std::size_t rows) { committed_ += rows; }

  /// Overwrites one stored entry in place (test rigging).
  void overwrite(std::size_t l, std::size_t row, std::span<const T> k, std::span<const T> v) {
    BLOCKSPEC_CHECK(row < committed_ && k.size() == d_ && v.size() == d_, ContractError, "overwrite out of range");
    std::copy(k.begin(), k.end(), k_[l].begin() + static_cast<std::ptrdiff_t>(row * d_));
    std::copy(v.begin(), v.end(), v_[l].begin() + static_cast<std::ptrdiff_t>(row * d_));
  }

  void truncate(std::size_t n) {
    BLOCKSPEC_CHECK(n <= committed_, ContractError, "draft cache truncate beyond committed length");
    for (std::size_t l = 0; l < k_.size(); ++l) {
      std::fill(k_[l].begin() + static_cast<std::ptrdiff_t>(n * d_),
                k_[l].begin() + static_cast<std::ptrdiff_t>(committed_ * d_), T(0));
      std::fill(v_[l].begin() + static_cast<std::ptrdiff_t>(n * d_),
                v_[l].begin() + static_cast<std::ptrdiff_t>(committed_ * d_), T(0));
    }
    committed_ = n;
  }

 private:
  std::size_t d_, max_seq_;
  std::vector<std::vector<T>> k_, v_;
  std::size_t committed_ = 0;
};

struct DraftMode {
  bool sample = false;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static DraftMode greedy() { return {}; }
  static DraftMode sampled(double temperature, std::uint64_t seed) { return {true, temperature, seed}; }
};

struct DraftBlock {
  std::size_t anchor_pos = 0;
  std::vector<TokenId> tokens;          // gamma = B - 1 proposals for anchor_pos+1 ...
  std::vector<std::vector<double>> q;   // per-slot distributions (sample mode only)
};

template <typename T>
struct DraftLayer {
  BasicTensor<T> attn_norm, wq, wk, wv, wo;
  BasicTensor<T> mlp_norm, w_gate, w_up, w_down;
};

/// Keys/values preceding the query rows of a drafter forward. Column order in
/// the attention mask: cache rows, then fused rows, then query rows.
template <typename T>
struct DraftContext {
  const DraftKVCache<T>* cache = nullptr;
  BasicTensor<T> fused;                 // [S, d] context features (training path)
  std::vector<std::int64_t> fused_pos;  // their absolute positions
};

/// Block drafter. Every layer attends to context keys/values plus the current
/// block; all slots are decoded by one forward pass. Token embedding and LM
/// head are frozen copies of the target's.
template <typename T>
class DraftModel {
 public:
  DraftModel(DraftConfig cfg, const TargetModel<T>& target, std::uint64_t seed) : cfg_(cfg) {
    cfg_.target_d_model = target.config().d_model;
    cfg_.vocab_size = target.config().vocab_size;
    cfg_.max_seq = target.config().max_seq;
    cfg_.validate();
    taps_ = cfg_.conditioning ? select_tap_layers(target.config().n_layers, cfg_.n_feat) : TapSet{};
    target_hash_ = target.hash();
    tok_emb_ = target.tok_emb().clone();
    lm_head_ = target.lm_head().clone();
    PhiloxEngine rng(seed, RngStream::kInit);
    const auto d = static_cast<std::size_t>(cfg_.d_model), f = static_cast<std::size_t>(cfg_.d_ff);
    const double s = 0.02, s_out = 0.02 / std::sqrt(2.0 * cfg_.n_layers);
    if (cfg_.conditioning)
      fusion_ = FusionParams<T>::init(static_cast<std::size_t>(cfg_.n_feat * cfg_.target_d_model), d, rng);
    mask_emb_ = normal({1, d}, s, rng);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      DraftLayer<T> L;
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
    set_trainable(true);
  }

  const DraftConfig& config() const { return cfg_; }
  const TapSet& taps() const { return taps_; }
  const std::string& target_hash() const { return target_hash_; }
  const FusionParams<T>& fusion() const { return fusion_; }
  const BasicTensor<T>& mask_embedding() const { return mask_emb_; }
  const BasicTensor<T>& tok_emb() const { return tok_emb_; }
  const BasicTensor<T>& lm_head() const { return lm_head_; }
  Vocab vocab() const { return Vocab{cfg_.vocab_size}; }
  std::uint64_t forward_count() const { return forward_count_->load(); }

  /// Trainable parameters only (fusion, MASK embedding, layers, final norm).
  ParamList<T> params() const {
    ParamList<T> p;
    if (cfg_.conditioning) {
      p.push_back({"fusion.weight", fusion_.weight});
      p.push_back({"fusion.bias", fusion_.bias});
    }
    p.push_back({"mask_emb", mask_emb_});
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
    return p;
  }

  void set_trainable(bool on) {
    for (auto& np : params()) {
      auto t = np.tensor;
      t.set_requires_grad(on);
      if (!on) t.clear_grad();
    }
  }

  DraftKVCache<T> make_cache() const {
    return DraftKVCache<T>(layers_.size(), static_cast<std::size_t>(cfg_.d_model),
                           static_cast<std::size_t>(cfg_.max_seq));
  }

  BasicTensor<T> fuse_taps(const BasicTensor<T>& tapped) const {
    BLOCKSPEC_CHECK(cfg_.conditioning, ContractError, "fuse_taps on an unconditioned drafter");
    return fuse(tapped, fusion_);
  }

  ContextKV<T> context_kv(std::size_t layer, const BasicTensor<T>& fused, std::span<const std::int64_t> pos) const {
    return project_kv(fused, layers_.at(layer).wk, layers_[layer].wv, pos,
                      static_cast<std::size_t>(cfg_.n_heads), cfg_.use_rope, cfg_.rope_theta);
  }

  /// Fuses tapped target hiddens and appends their per-layer keys/values to
  /// the cache at positions committed_len, committed_len+1, ...
  void inject(DraftKVCache<T>& cache, const BasicTensor<T>& tapped) const {
    NoGradGuard ng;
    const auto fused = fuse_taps(tapped);
    std::vector<std::int64_t> pos(fused.rows());
    std::iota(pos.begin(), pos.end(), static_cast<std::int64_t>(cache.committed_len()));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto kv = context_kv(l, fused, pos);
      cache.write(l, kv.key.data(), kv.value.data());
    }
    cache.commit(fused.rows());
  }

  /// Block input rows: token embedding, or the MASK embedding where is_mask is set.
  BasicTensor<T> input_rows(std::span<const TokenId> tokens) const {
    const Vocab v = vocab();
    std::vector<TokenId> ids;
    std::vector<ops::RowPick> picks;
    for (TokenId t : tokens) {
      if (t == v.mask()) {
        picks.push_back({1, 0});
      } else {
        picks.push_back({0, static_cast<std::uint32_t>(ids.size())});
        ids.push_back(t);
      }
    }
    if (ids.empty()) ids.push_back(0);
    auto emb = ops::embedding_lookup(tok_emb_, std::span<const TokenId>(ids));
    return ops::gather_rows(std::vector<BasicTensor<T>>{emb, mask_emb_}, std::span<const ops::RowPick>(picks));
  }

  /// Runs every drafter layer over the query rows `h`.
  /// `mask` has one row per query and columns [cache rows | fused rows | query rows].
  /// If `kv_out` is set, the first `kv_rows` query rows' keys/values per layer are returned.
  BasicTensor<T> hidden(const DraftContext<T>& ctx, BasicTensor<T> h, std::span<const std::int64_t> q_pos,
                        const AttentionMask& mask, std::vector<ContextKV<T>>* kv_out = nullptr,
                        std::size_t kv_rows = 0) const {
    forward_count_->fetch_add(1);
    const std::size_t heads = static_cast<std::size_t>(cfg_.n_heads);
    const T eps = static_cast<T>(cfg_.norm_eps);
    const std::size_t n_cache = ctx.cache ? ctx.cache->committed_len() : 0;
    const std::size_t n_fused = ctx.fused.defined() ? ctx.fused.rows() : 0;
    BLOCKSPEC_CHECK(mask.rows == h.rows() && mask.cols == n_cache + n_fused + h.rows(), DimensionError,
                    "drafter mask shape does not match context and query rows");
    BLOCKSPEC_CHECK(q_pos.size() == h.rows(), DimensionError, "drafter: one position per query row");
    BLOCKSPEC_CHECK(!ctx.cache || ctx.cache->n_layers() == layers_.size(), ContractError,
                    "draft cache layer count mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      auto x = ops::rmsnorm(h, L.attn_norm, eps);
      auto q = ops::matmul(x, L.wq);
      auto k = ops::matmul(x, L.wk);
      auto v = ops::matmul(x, L.wv);
      if (cfg_.use_rope) {
        q = ops::rope_apply(q, q_pos, heads, cfg_.rope_theta);
        k = ops::rope_apply(k, q_pos, heads, cfg_.rope_theta);
      }
      if (kv_out) {
        kv_out->push_back({ops::slice_rows(k, 0, kv_rows), ops::slice_rows(v, 0, kv_rows)});
      }
      BasicTensor<T> keys = k, values = v;
      if (n_fused) {
        auto ckv = context_kv(l, ctx.fused, ctx.fused_pos);
        keys = ops::concat_rows(std::vector<BasicTensor<T>>{ckv.key, k});
        values = ops::concat_rows(std::vector<BasicTensor<T>>{ckv.value, v});
      }
      KvPrefix<T> prefix;
      if (n_cache) prefix = ctx.cache->prefix(l);
      auto a = ops::masked_attention(q, keys, values, mask, heads, prefix);
      h = ops::add(h, ops::matmul(a, L.wo));
      h = ops::add(h, ops::silu_mlp(ops::rmsnorm(h, L.mlp_norm, eps), L.w_gate, L.w_up, L.w_down));
    }
    return h;
  }

  /// Final norm, frozen LM head, MASK/PAD logits set to -inf.
  BasicTensor<T> logits_head(const BasicTensor<T>& hidden) const {
    BLOCKSPEC_CHECK(hidden.cols() == lm_head_.dim(0), DimensionError,
                    "drafter hidden width " + std::to_string(hidden.cols()) + " != head input width " +
                        std::to_string(lm_head_.dim(0)));
    auto logits = ops::matmul(ops::rmsnorm(hidden, final_norm_, static_cast<T>(cfg_.norm_eps)), lm_head_);
    const Vocab v = vocab();
    const std::int32_t masked[] = {v.mask(), v.pad()};
    return ops::fill_columns(logits, std::span<const std::int32_t>(masked), -std::numeric_limits<T>::infinity());
  }

  /// One forward over [anchor, MASK x (B-1)] at positions anchor_pos.. attending
  /// to every cached context entry. Conditioned mode: the cache holds context for
  /// positions < anchor_pos. Unconditioned mode: `pending` are accepted tokens not
  /// yet in the cache; they are processed causally in the same forward and their
  /// keys/values appended to the cache.
  DraftBlock draft_block(TokenId anchor, std::size_t anchor_pos, DraftKVCache<T>& cache, std::size_t block_size,
                         const DraftMode& mode, std::span<const TokenId> pending = {}) const {
    NoGradGuard ng;
    const Vocab v = vocab();
    BLOCKSPEC_CHECK(block_size >= 2, ConfigError, "block size must be >= 2");
    BLOCKSPEC_CHECK(v.valid(anchor) && anchor != v.mask() && anchor != v.pad(), ContractError,
                    "anchor must be a clean vocabulary token");
    if (cfg_.conditioning) {
      BLOCKSPEC_CHECK(pending.empty(), ContractError, "conditioned drafter takes no pending tokens");
    }
    BLOCKSPEC_CHECK(cache.committed_len() + pending.size() == anchor_pos, ContractError,
                    "draft cache covers " + std::to_string(cache.committed_len() + pending.size()) +
                        " positions but anchor is at " + std::to_string(anchor_pos));
    const std::size_t np = pending.size(), nq = np + block_size, nc = cache.committed_len();
    std::vector<TokenId> toks(pending.begin(), pending.end());
    toks.push_back(anchor);
    toks.resize(nq, v.mask());
    std::vector<std::int64_t> pos(nq);
    std::iota(pos.begin(), pos.end(), static_cast<std::int64_t>(nc));
    AttentionMask mask(nq, nc + nq);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < nc; ++j) mask.set(i, j, true);
      // pending rows are causal; block rows see all pending rows and the whole block
      const std::size_t lim = i < np ? i + 1 : nq;
      for (std::size_t j = 0; j < lim; ++j) mask.set(i, nc + j, true);
    }
    std::vector<ContextKV<T>> kv;
    DraftContext<T> ctx{&cache, {}, {}};
    auto h = hidden(ctx, input_rows(toks), pos, mask, np ? &kv : nullptr, np);
    auto logits = logits_head(ops::slice_rows(h, np + 1, nq));
    if (np) {
      for (std::size_t l = 0; l < kv.size(); ++l) cache.write(l, kv[l].key.data(), kv[l].value.data());
      cache.commit(np);
    }
    DraftBlock out;
    out.anchor_pos = anchor_pos;
    const std::size_t vs = logits.cols();
    for (std::size_t k = 0; k + 1 < block_size; ++k) {
      std::span<const T> row(logits.ptr() + k * vs, vs);
      if (!mode.sample) {
        out.tokens.push_back(argmax(row));
      } else {
        auto q = softmax_probs(row, mode.temperature);
        const double u = CounterRng::uniform(mode.seed, RngStream::kDraft, anchor_pos + k + 1);
        out.tokens.push_back(sample_categorical(q, u));
        out.q.push_back(std::move(q));
      }
    }
    return out;
  }

  /// Same parameters in another precision, bound to `target` (which must be
  /// this drafter's target in that precision).
  template <typename U>
  DraftModel<U> cast(const TargetModel<U>& target) const {
    DraftModel<U> m(cfg_, target, 0);
    BLOCKSPEC_CHECK(m.target_hash() == target_hash_, ContractError, "cast: target hash mismatch");
    auto src = params();
    auto dst = m.params();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto t = dst[i].tensor;
      for (std::size_t j = 0; j < t.numel(); ++j) t.data()[j] = static_cast<U>(src[i].tensor.data()[j]);
    }
    return m;
  }

  /// FNV-1a over config, tap set, target hash and trainable f32 parameters.
  std::string hash() const {
    nlohmann::json meta = nlohmann::json(cfg_);
    meta["taps"] = taps_.layers;
    meta["target_hash"] = target_hash_;
    return content_hash(meta, records());
  }

  std::vector<TensorRecord> records() const {
    std::vector<TensorRecord> out;
    for (const auto& np : params()) out.push_back({np.name, np.tensor.shape(), to_f32<T>(np.tensor.data())});
    return out;
  }

  void save(const std::string& path) const {
    Container c;
    c.kind = "draft";
    c.config = nlohmann::json(cfg_);
    c.meta = {{"target_hash", target_hash_}, {"taps", taps_.layers}, {"hash", hash()}};
    c.tensors = records();
    write_container(path, c);
  }

  /// Loads a drafter and binds it to `target`; the stored target hash must match.
  static DraftModel load(const std::string& path, const TargetModel<T>& target) {
    const Container c = read_container(path);
    BLOCKSPEC_CHECK(c.kind == "draft", ConfigError, path + ": expected a draft checkpoint, found '" + c.kind + "'");
    const std::string want = c.meta.value("target_hash", std::string());
    const std::string have = target.hash();
    BLOCKSPEC_CHECK(want == have, ContractError,
                    "target hash mismatch: drafter " + path + " was trained against target " + want +
                        " but the supplied target hashes to " + have);
    DraftConfig cfg = c.config.get<DraftConfig>();
    BLOCKSPEC_CHECK(cfg.target_d_model == target.config().d_model, ConfigError,
                    path + ": drafter expects target width " + std::to_string(cfg.target_d_model));
    DraftModel m(cfg, target, 0);
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

 private:
  static BasicTensor<T> normal(Shape shape, double stddev, PhiloxEngine& rng) {
    BasicTensor<T> t(std::move(shape));
    for (auto& x : t.data()) x = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  DraftConfig cfg_;
  TapSet taps_;
  std::string target_hash_;
  BasicTensor<T> tok_emb_, lm_head_;
  FusionParams<T> fusion_;
  BasicTensor<T> mask_emb_;
  std::vector<DraftLayer<T>> layers_;
  BasicTensor<T> final_norm_;
  std::unique_ptr<std::atomic<std::uint64_t>> forward_count_ = std::make_unique<std::atomic<std::uint64_t>>(0);
};

}  // namespace blockspec
