// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "blockspec/numkernel/tensor.hpp"

namespace blockspec {

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

struct AdamWConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
};

/// AdamW with decoupled weight decay and global-norm gradient clipping.
template <typename T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  /// One update at learning rate `lr` (defaults to the configured rate).
  /// Every registered parameter must carry a gradient. Clears gradients.
  void step(double lr) {
    double sq = 0;
    for (auto& p : params_) {
      BLOCKSPEC_CHECK(p.tensor.has_grad(), ContractError, "AdamW: parameter '" + p.name + "' has no gradient");
      for (const T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    last_grad_norm_ = std::sqrt(sq);
    if (!std::isfinite(last_grad_norm_)) throw NumericError("AdamW: non-finite gradient norm");
    const double clip = (cfg_.grad_clip_norm > 0 && last_grad_norm_ > cfg_.grad_clip_norm)
                            ? cfg_.grad_clip_norm / last_grad_norm_
                            : 1.0;
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto w = params_[pi].tensor.data();
      auto g = params_[pi].tensor.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= lr * cfg_.weight_decay * wi;
        wi -= lr * mh / (std::sqrt(vh) + cfg_.eps);
        w[i] = static_cast<T>(wi);
      }
      params_[pi].tensor.clear_grad();
    }
  }
  void step() { step(cfg_.lr); }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  long step_count() const { return step_count_; }
  double last_grad_norm() const { return last_grad_norm_; }
  const AdamWConfig& config() const { return cfg_; }
  const ParamList<T>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_count_ = 0;
  double last_grad_norm_ = 0;
};

/// Linear warmup followed by cosine decay to zero.
struct CosineSchedule {
  double base_lr = 6e-4;
  long total_steps = 1;
  double warmup_ratio = 0.04;

  long warmup_steps() const {
    return static_cast<long>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  }

  /// Learning rate for 0-based step index.
  double lr(long step) const {
    const long warm = warmup_steps();
    if (step < warm) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double span = static_cast<double>(std::max(1L, total_steps - warm));
    const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

}  // namespace blockspec
