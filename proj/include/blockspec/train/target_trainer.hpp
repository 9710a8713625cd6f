// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "blockspec/corpus/tasks.hpp"
#include "blockspec/model/target.hpp"

namespace blockspec {

struct TrainTargetConfig {
  int epochs = 4;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double warmup_ratio = 0.04;
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const TrainTargetConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"warmup_ratio", c.warmup_ratio},
           {"grad_clip", c.grad_clip},
           {"weight_decay", c.weight_decay},
           {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, TrainTargetConfig& c) {
  c = TrainTargetConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
}

struct TargetEpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // token-weighted mean over the epoch
  double lr_end = 0.0;
};

/// Mean per-token response cross-entropy (no tape).
template <typename T>
double eval_target_loss(const TargetModel<T>& model, const std::vector<Sample>& samples) {
  NoGradGuard ng;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : samples) {
    total += static_cast<double>(model.response_loss(s.prompt, s.response, T(1)).item());
    tokens += s.response.size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

/// Next-token training on response positions with AdamW and a cosine schedule.
/// Batches accumulate per-sample tapes; the loss is normalized by the batch's
/// response-token count.
template <typename T>
std::vector<TargetEpochLog> train_target(TargetModel<T>& model, const std::vector<Sample>& corpus,
                                         const TrainTargetConfig& cfg,
                                         const std::function<void(const TargetEpochLog&)>& on_epoch = {}) {
  BLOCKSPEC_CHECK(!corpus.empty(), ConfigError, "train_target: empty corpus");
  BLOCKSPEC_CHECK(cfg.epochs >= 1 && cfg.batch_size >= 1, ConfigError, "train_target: epochs and batch_size must be >= 1");
  model.set_trainable(true);
  AdamWConfig ac;
  ac.lr = cfg.lr;
  ac.grad_clip_norm = cfg.grad_clip;
  ac.weight_decay = cfg.weight_decay;
  AdamW<T> opt(model.params(), ac);
  const std::size_t steps_per_epoch = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  CosineSchedule sched{cfg.lr, static_cast<long>(steps_per_epoch) * cfg.epochs, cfg.warmup_ratio};
  std::vector<TargetEpochLog> logs;
  std::vector<std::size_t> order(corpus.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    PhiloxEngine shuf(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), RngStream::kShuffle);
    shuf.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::size_t ntok = 0;
      for (std::size_t i = b; i < e; ++i) ntok += corpus[order[i]].response.size();
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = corpus[order[i]];
        auto loss = model.response_loss(s.prompt, s.response, static_cast<T>(ntok));
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw NumericError("train_target: loss diverged");
        epoch_loss += lv * static_cast<double>(ntok);
        backward(loss);
      }
      epoch_tokens += ntok;
      opt.step(sched.lr(step));
      ++step;
    }
    TargetEpochLog log{epoch + 1, epoch_loss / static_cast<double>(epoch_tokens), sched.lr(step - 1)};
    if (!std::isfinite(log.train_loss)) throw NumericError("train_target: loss diverged");
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  model.set_trainable(false);
  return logs;
}

}  // namespace blockspec
