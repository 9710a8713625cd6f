// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockspec/core/error.hpp"

namespace blockspec {

struct TargetConfig {
  int n_layers = 12;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 64;
  int max_seq = 512;
  double rope_theta = 10000.0;
  double norm_eps = 1e-6;

  void validate() const {
    BLOCKSPEC_CHECK(n_layers >= 4, ConfigError, "target n_layers must be >= 4");
    BLOCKSPEC_CHECK(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, ConfigError,
                    "target d_model must be divisible by n_heads");
    BLOCKSPEC_CHECK((d_model / n_heads) % 2 == 0, ConfigError, "target head width must be even");
    BLOCKSPEC_CHECK(d_ff > 0 && vocab_size >= 28 && max_seq >= 8, ConfigError,
                    "target d_ff/vocab_size/max_seq out of range");
  }
  bool operator==(const TargetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TargetConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},
           {"d_model", c.d_model},
           {"n_heads", c.n_heads},
           {"d_ff", c.d_ff},
           {"vocab_size", c.vocab_size},
           {"max_seq", c.max_seq},
           {"rope_theta", c.rope_theta},
           {"norm_eps", c.norm_eps}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, TargetConfig& c) {
  c = TargetConfig{};
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.rope_theta = j.value("rope_theta", c.rope_theta);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
}

struct DraftConfig {
  int n_layers = 5;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 256;
  int block_size = 16;
  int n_feat = 5;
  bool conditioning = true;
  bool use_rope = true;
  int target_d_model = 128;
  int vocab_size = 64;
  int max_seq = 512;
  double rope_theta = 10000.0;
  double norm_eps = 1e-6;

  void validate() const {
    BLOCKSPEC_CHECK(block_size >= 2, ConfigError, "block_size must be >= 2");
    BLOCKSPEC_CHECK(n_layers >= 1, ConfigError, "draft n_layers must be >= 1");
    BLOCKSPEC_CHECK(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, ConfigError,
                    "draft d_model must be divisible by n_heads");
    BLOCKSPEC_CHECK((d_model / n_heads) % 2 == 0, ConfigError, "draft head width must be even");
    BLOCKSPEC_CHECK(d_model == target_d_model, ConfigError,
                    "draft d_model (" + std::to_string(d_model) + ") must equal target d_model (" +
                        std::to_string(target_d_model) + ")");
    BLOCKSPEC_CHECK(!conditioning || n_feat >= 1, ConfigError, "n_feat must be >= 1");
  }
  bool operator==(const DraftConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DraftConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},
           {"d_model", c.d_model},
           {"n_heads", c.n_heads},
           {"d_ff", c.d_ff},
           {"block_size", c.block_size},
           {"n_feat", c.n_feat},
           {"conditioning", c.conditioning},
           {"use_rope", c.use_rope},
           {"target_d_model", c.target_d_model},
           {"vocab_size", c.vocab_size},
           {"max_seq", c.max_seq},
           {"rope_theta", c.rope_theta},
           {"norm_eps", c.norm_eps}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, DraftConfig& c) {
  c = DraftConfig{};
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.block_size = j.value("block_size", c.block_size);
  c.n_feat = j.value("n_feat", c.n_feat);
  c.conditioning = j.value("conditioning", c.conditioning);
  c.use_rope = j.value("use_rope", c.use_rope);
  c.target_d_model = j.value("target_d_model", c.target_d_model);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.rope_theta = j.value("rope_theta", c.rope_theta);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
}

/// 1-based indices of the target blocks whose outputs feed the drafter.
struct TapSet {
  std::vector<int> layers;

  std::size_t size() const { return layers.size(); }
  bool contains(int layer) const {
    for (int l : layers)
      if (l == layer) return true;
    return false;
  }
  void validate(int n_layers) const {
    BLOCKSPEC_CHECK(!layers.empty(), ConfigError, "tap set is empty");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      BLOCKSPEC_CHECK(layers[i] >= 2 && layers[i] <= n_layers - 2, ConfigError,
                      "tap layer " + std::to_string(layers[i]) + " outside [2, " +
                          std::to_string(n_layers - 2) + "]");
      BLOCKSPEC_CHECK(i == 0 || layers[i] > layers[i - 1], ConfigError,
                      "tap layers must be strictly increasing");
    }
  }
  bool operator==(const TapSet&) const = default;
};

/// Spreads n taps uniformly from the second block to the third-to-last.
inline TapSet select_tap_layers(int n_layers, int n_feat) {
  BLOCKSPEC_CHECK(n_layers >= 4, ConfigError, "select_tap_layers: n_layers must be >= 4");
  BLOCKSPEC_CHECK(n_feat >= 1 && n_feat <= n_layers - 3, ConfigError,
                  "select_tap_layers: n_feat must be in [1, " + std::to_string(n_layers - 3) + "]");
  const int lo = 2, hi = n_layers - 2;
  TapSet t;
  if (n_feat == 1) {
    t.layers.push_back(static_cast<int>(std::lround((lo + hi) / 2.0)));
    return t;
  }
  for (int i = 0; i < n_feat; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / (n_feat - 1);
    t.layers.push_back(static_cast<int>(std::lround(x)));
  }
  t.validate(n_layers);
  return t;
}

}  // namespace blockspec
