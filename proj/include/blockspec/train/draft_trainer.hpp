// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "blockspec/corpus/jsonl.hpp"
#include "blockspec/model/draft.hpp"

namespace blockspec {

enum class FeatureMode { kOnline, kOffline };

inline std::string feature_mode_name(FeatureMode m) { return m == FeatureMode::kOnline ? "online" : "offline"; }

inline FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "online") return FeatureMode::kOnline;
  if (s == "offline") return FeatureMode::kOffline;
  throw ConfigError("unknown feature mode '" + s + "' (expected online|offline)");
}

/// Decay rate of the per-slot loss weights for the block sizes with a
/// published setting; nullopt otherwise.
inline std::optional<double> default_decay_gamma(int block_size) {
  switch (block_size) {
    case 16: return 7.0;
    case 10: return 5.0;
    case 8: return 4.0;
    default: return std::nullopt;
  }
}

struct DraftTrainConfig {
  int epochs = 6;
  double lr = 6e-4;
  double warmup_ratio = 0.04;
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  std::size_t anchors_per_seq = 32;
  std::size_t batch_size = 8;  // sequences per optimizer step
  double decay_gamma = 0.0;    // <= 0: use default_decay_gamma(block_size)
  bool uniform_weights = false;
  FeatureMode feature_mode = FeatureMode::kOnline;
  std::string feature_cache;  // offline mode: path of the feature file
  std::uint64_t seed = 0;

  double resolved_decay_gamma(int block_size) const {
    if (decay_gamma > 0) return decay_gamma;
    auto d = default_decay_gamma(block_size);
    BLOCKSPEC_CHECK(d.has_value(), ConfigError,
                    "no default decay_gamma for block size " + std::to_string(block_size) + "; set it explicitly");
    return *d;
  }

  void validate() const {
    BLOCKSPEC_CHECK(epochs >= 1, ConfigError, "epochs must be >= 1");
    BLOCKSPEC_CHECK(anchors_per_seq >= 1, ConfigError, "anchors_per_seq must be >= 1");
    BLOCKSPEC_CHECK(batch_size >= 1, ConfigError, "batch_size must be >= 1");
    BLOCKSPEC_CHECK(decay_gamma >= 0, ConfigError, "decay_gamma must be > 0");
    BLOCKSPEC_CHECK(feature_mode == FeatureMode::kOnline || !feature_cache.empty(), ConfigError,
                    "offline feature mode needs a feature cache path");
  }
};

inline void to_json(nlohmann::json& j, const DraftTrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"lr", c.lr},
                     {"warmup_ratio", c.warmup_ratio},
                     {"grad_clip", c.grad_clip},
                     {"weight_decay", c.weight_decay},
                     {"anchors_per_seq", c.anchors_per_seq},
                     {"batch_size", c.batch_size},
                     {"decay_gamma", c.decay_gamma},
                     {"uniform_weights", c.uniform_weights},
                     {"feature_mode", feature_mode_name(c.feature_mode)},
                     {"feature_cache", c.feature_cache},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DraftTrainConfig& c) {
  c = DraftTrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.anchors_per_seq = j.value("anchors_per_seq", c.anchors_per_seq);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.decay_gamma = j.value("decay_gamma", c.decay_gamma);
  c.uniform_weights = j.value("uniform_weights", c.uniform_weights);
  c.feature_mode = parse_feature_mode(j.value("feature_mode", std::string("online")));
  c.feature_cache = j.value("feature_cache", c.feature_cache);
  c.seed = j.value("seed", c.seed);
}

// ---------------------------------------------------------------------------
// Anchors, mask, loss

/// Sorted anchor positions into the full prompt+response sequence.
struct AnchorPlan {
  std::vector<std::size_t> anchors;
};

/// Draws min(K, valid) distinct anchors from the response positions that have
/// at least one following token: [prompt_len, seq_len - 2].
inline AnchorPlan sample_anchors(std::size_t seq_len, std::size_t prompt_len, std::size_t k,
                                 std::uint64_t seed, std::uint64_t sequence_id, std::uint64_t epoch) {
  AnchorPlan plan;
  if (seq_len < prompt_len + 2) return plan;
  std::vector<std::size_t> valid(seq_len - 1 - prompt_len);
  std::iota(valid.begin(), valid.end(), prompt_len);
  PhiloxEngine rng(mix_seed(seed, sequence_id, epoch), RngStream::kAnchors);
  const std::size_t take = std::min(k, valid.size());
  // partial Fisher-Yates
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(valid.size() - i));
    std::swap(valid[i], valid[j]);
  }
  plan.anchors.assign(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(plan.anchors.begin(), plan.anchors.end());
  return plan;
}

/// Training attention mask. Query rows are the concatenated blocks
/// [anchor, MASK x (B-1)], one block per anchor, optionally preceded by
/// `context_len` causal context-token rows (unconditioned drafter).
/// Columns: `context_len` context columns (position c), then one column per
/// query row. A block anchored at p sees context columns c < p and every
/// column of its own block; nothing else.
inline AttentionMask build_block_mask(std::span<const std::size_t> anchors, std::size_t block_size,
                                      std::size_t context_len, bool context_rows = false) {
  const std::size_t nb = anchors.size() * block_size;
  const std::size_t nctx_rows = context_rows ? context_len : 0;
  AttentionMask m(nctx_rows + nb, context_len + nb);
  for (std::size_t i = 0; i < nctx_rows; ++i)
    for (std::size_t c = 0; c <= i; ++c) m.set(i, c, true);
  for (std::size_t b = 0; b < anchors.size(); ++b) {
    const std::size_t p = anchors[b];
    for (std::size_t r = 0; r < block_size; ++r) {
      const std::size_t row = nctx_rows + b * block_size + r;
      for (std::size_t c = 0; c < std::min(p, context_len); ++c) m.set(row, c, true);
      for (std::size_t r2 = 0; r2 < block_size; ++r2) m.set(row, context_len + b * block_size + r2, true);
    }
  }
  return m;
}

/// w_k = exp(-(k-1)/decay_gamma) for slots k = 1..B-1 (all ones if uniform).
inline std::vector<double> loss_weights(std::size_t block_size, double decay_gamma, bool uniform = false) {
  BLOCKSPEC_CHECK(decay_gamma > 0, ConfigError, "decay_gamma must be > 0");
  std::vector<double> w(block_size - 1);
  for (std::size_t k = 1; k < block_size; ++k)
    w[k - 1] = uniform ? 1.0 : std::exp(-static_cast<double>(k - 1) / decay_gamma);
  return w;
}

/// sum_blocks sum_k w_k CE_k / sum of w_k over non-ignored slots.
/// `logits` rows are block slots 1..B-1 in block order; labels < 0 are ignored.
/// Returns an undefined tensor when every label is ignored.
template <typename T>
BasicTensor<T> block_ce_loss(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                             std::size_t block_size, double decay_gamma, bool uniform = false) {
  const std::size_t g = block_size - 1;
  BLOCKSPEC_CHECK(logits.rows() == labels.size() && labels.size() % g == 0, DimensionError,
                  "block_ce_loss: expected (B-1) rows per block");
  const auto w = loss_weights(block_size, decay_gamma, uniform);
  std::vector<T> weights(labels.size());
  double norm = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    weights[i] = static_cast<T>(w[i % g]);
    if (labels[i] >= 0) norm += w[i % g];
  }
  if (norm == 0) return {};
  return ops::cross_entropy(logits, labels, std::span<const T>(weights), static_cast<T>(norm));
}

/// Drafter loss for one sequence. `taps` holds target tap rows for positions
/// 0.. (at least max(anchor) rows); unused for an unconditioned drafter.
template <typename T>
BasicTensor<T> sequence_block_loss(const DraftModel<T>& m, std::span<const TokenId> seq, const BasicTensor<T>& taps,
                                   const AnchorPlan& plan, std::size_t block_size, double decay_gamma,
                                   bool uniform = false) {
  if (plan.anchors.empty()) return {};
  const Vocab v = m.vocab();
  const std::size_t B = block_size, nA = plan.anchors.size();
  const std::size_t S = plan.anchors.back();  // context rows 0..S-1 are visible to some block
  const bool cond = m.config().conditioning;
  DraftContext<T> ctx;
  std::vector<TokenId> q_tokens;
  std::vector<std::int64_t> q_pos;
  if (cond) {
    if (S > 0) {
      BLOCKSPEC_CHECK(taps.defined() && taps.rows() >= S, ContractError, "sequence_block_loss: missing tap rows");
      ctx.fused = m.fuse_taps(taps.rows() == S ? taps : ops::slice_rows(taps, 0, S));
      ctx.fused_pos.resize(S);
      std::iota(ctx.fused_pos.begin(), ctx.fused_pos.end(), 0);
    }
  } else {
    q_tokens.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(S));
    for (std::size_t i = 0; i < S; ++i) q_pos.push_back(static_cast<std::int64_t>(i));
  }
  const std::size_t nctx_rows = q_tokens.size();
  std::vector<std::int32_t> labels;
  std::vector<ops::RowPick> slot_rows;
  for (std::size_t b = 0; b < nA; ++b) {
    const std::size_t p = plan.anchors[b];
    for (std::size_t r = 0; r < B; ++r) {
      q_tokens.push_back(r == 0 ? seq[p] : v.mask());
      q_pos.push_back(static_cast<std::int64_t>(p + r));
      if (r > 0) {
        labels.push_back(p + r < seq.size() ? seq[p + r] : -1);
        slot_rows.push_back({0, static_cast<std::uint32_t>(nctx_rows + b * B + r)});
      }
    }
  }
  const AttentionMask mask =
      build_block_mask(std::span<const std::size_t>(plan.anchors), B, S, /*context_rows=*/!cond);
  auto h = m.hidden(ctx, m.input_rows(q_tokens), q_pos, mask);
  auto slots = ops::gather_rows(std::vector<BasicTensor<T>>{h}, std::span<const ops::RowPick>(slot_rows));
  return block_ce_loss(m.logits_head(slots), std::span<const std::int32_t>(labels), B, decay_gamma, uniform);
}

// ---------------------------------------------------------------------------
// Target features

/// Tap rows for every position of `seq` (one uncached target pass).
template <typename T>
BasicTensor<T> target_features(const TargetModel<T>& target, std::span<const TokenId> seq, const TapSet& taps) {
  TargetKVCache<T> cache(target.config());
  return target.forward(seq, cache, &taps).taps;
}

/// Offline feature file: the checkpoint container with kind "features",
/// meta {target_hash, taps, corpus_hash, width, count} and one f32 tensor
/// "seq.<i>" of shape [len_i, n_feat * d] per sequence.
template <typename T>
void write_feature_cache(const std::string& path, const TargetModel<T>& target, const TapSet& taps,
                         const std::vector<Sample>& corpus) {
  Container c;
  c.kind = "features";
  c.meta = {{"target_hash", target.hash()},
            {"taps", taps.layers},
            {"corpus_hash", corpus_hash(corpus)},
            {"width", taps.size() * static_cast<std::size_t>(target.config().d_model)},
            {"count", corpus.size()}};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto seq = corpus[i].sequence();
    auto f = target_features(target, seq, taps);
    c.tensors.push_back({"seq." + std::to_string(i), f.shape(), to_f32<T>(f.data())});
  }
  write_container(path, c);
}

/// Loads a feature file; any identity mismatch is a hard error.
template <typename T>
std::vector<BasicTensor<T>> read_feature_cache(const std::string& path, const TargetModel<T>& target,
                                               const TapSet& taps, const std::vector<Sample>& corpus) {
  const Container c = read_container(path);
  BLOCKSPEC_CHECK(c.kind == "features", ConfigError, path + ": not a feature cache");
  auto check = [&](const char* key, const nlohmann::json& want) {
    BLOCKSPEC_CHECK(c.meta.contains(key) && c.meta[key] == want, ContractError,
                    "stale feature cache " + path + ": " + key + " is " +
                        (c.meta.contains(key) ? c.meta[key].dump() : std::string("missing")) + ", expected " +
                        want.dump());
  };
  check("target_hash", target.hash());
  check("taps", taps.layers);
  check("corpus_hash", corpus_hash(corpus));
  std::vector<BasicTensor<T>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = c.find("seq." + std::to_string(i));
    out.emplace_back(r.shape, from_f32<T>(r.data));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct DraftEpochLog {
  int epoch = 0;
  double loss = 0.0;  // mean per-sequence loss over the epoch
  double val_tau = 0.0;
  double lr_end = 0.0;
  double seconds = 0.0;
};

struct DraftTrainResult {
  std::vector<DraftEpochLog> epochs;
  std::vector<double> step_losses;
  std::size_t skipped_sequences = 0;  // responses too short for any anchor
};

inline nlohmann::json to_json_line(const DraftEpochLog& e) {
  return {{"epoch", e.epoch}, {"loss", e.loss}, {"val_tau", e.val_tau}, {"lr", e.lr_end}, {"seconds", e.seconds}};
}

/// Trains fusion, MASK embedding, drafter layers and final norm; the shared
/// embedding and head stay frozen. `val_probe` (optional) returns a
/// validation acceptance length after each epoch.
template <typename T>
DraftTrainResult train_drafter(DraftModel<T>& drafter, const TargetModel<T>& target, const std::vector<Sample>& corpus,
                               const DraftTrainConfig& cfg,
                               const std::type_identity_t<std::function<double(const DraftModel<T>&)>>& val_probe = {},
                               const std::function<void(const DraftEpochLog&)>& on_epoch = {}) {
  using Clock = std::chrono::steady_clock;
  cfg.validate();
  BLOCKSPEC_CHECK(!corpus.empty(), ConfigError, "train_drafter: empty corpus");
  BLOCKSPEC_CHECK(drafter.target_hash() == target.hash(), ContractError, "train_drafter: drafter bound to another target");
  const std::size_t B = static_cast<std::size_t>(drafter.config().block_size);
  const double gamma = cfg.resolved_decay_gamma(drafter.config().block_size);
  const bool cond = drafter.config().conditioning;

  std::vector<BasicTensor<T>> offline;
  if (cond && cfg.feature_mode == FeatureMode::kOffline) {
    std::ifstream probe(cfg.feature_cache);
    if (!probe.good()) write_feature_cache(cfg.feature_cache, target, drafter.taps(), corpus);
    offline = read_feature_cache(cfg.feature_cache, target, drafter.taps(), corpus);
  }

  drafter.set_trainable(true);
  AdamWConfig ac;
  ac.lr = cfg.lr;
  ac.grad_clip_norm = cfg.grad_clip;
  ac.weight_decay = cfg.weight_decay;
  AdamW<T> opt(drafter.params(), ac);
  const std::size_t steps_per_epoch = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  CosineSchedule sched{cfg.lr, static_cast<long>(steps_per_epoch) * cfg.epochs, cfg.warmup_ratio};

  DraftTrainResult res;
  std::vector<std::size_t> order(corpus.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    PhiloxEngine shuf(mix_seed(cfg.seed, 0x5eedULL, static_cast<std::uint64_t>(epoch)), RngStream::kShuffle);
    shuf.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t epoch_seqs = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      // plans first so the batch normalizer is known before any backward
      std::vector<AnchorPlan> plans;
      std::size_t used = 0;
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = corpus[order[i]];
        plans.push_back(sample_anchors(s.prompt.size() + s.response.size(), s.prompt.size(), cfg.anchors_per_seq,
                                       cfg.seed, order[i], static_cast<std::uint64_t>(epoch)));
        if (plans.back().anchors.empty()) {
          if (epoch == 0) ++res.skipped_sequences;
        } else {
          ++used;
        }
      }
      if (used == 0) continue;
      double batch_loss = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const auto& plan = plans[i - b];
        if (plan.anchors.empty()) continue;
        const auto seq = corpus[order[i]].sequence();
        BasicTensor<T> taps;
        if (cond) {
          if (!offline.empty()) {
            taps = offline[order[i]];
          } else {
            NoGradGuard ng;
            taps = target_features(target, std::span<const TokenId>(seq.data(), plan.anchors.back() + 1),
                                   drafter.taps());
          }
        }
        auto loss = sequence_block_loss(drafter, seq, taps, plan, B, gamma, cfg.uniform_weights);
        if (!loss.defined()) continue;
        auto scaled = ops::scale(loss, static_cast<T>(1.0 / static_cast<double>(used)));
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw NumericError("train_drafter: loss diverged");
        batch_loss += lv;
        backward(scaled);
      }
      for (auto& np : drafter.params()) {
        auto t = np.tensor;
        if (!t.has_grad()) t.node()->ensure_grad();
      }
      opt.step(sched.lr(step));
      ++step;
      res.step_losses.push_back(batch_loss / static_cast<double>(used));
      epoch_loss += batch_loss;
      epoch_seqs += used;
    }
    DraftEpochLog log;
    log.epoch = epoch + 1;
    log.loss = epoch_seqs ? epoch_loss / static_cast<double>(epoch_seqs) : 0.0;
    log.lr_end = sched.lr(std::max(0L, step - 1));
    if (val_probe) {
      drafter.set_trainable(false);
      log.val_tau = val_probe(drafter);
      drafter.set_trainable(true);
    }
    log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  drafter.set_trainable(false);
  return res;
}

}  // namespace blockspec
