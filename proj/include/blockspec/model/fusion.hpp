// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "blockspec/core/rng.hpp"
#include "blockspec/numkernel/ops.hpp"

namespace blockspec {

/// Affine map from concatenated tap hiddens (n_feat * d_target) to d_draft.
template <typename T>
struct FusionParams {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  static FusionParams init(std::size_t in, std::size_t out, PhiloxEngine& rng, double stddev = 0.02) {
    FusionParams p{BasicTensor<T>({in, out}), BasicTensor<T>({out}, T(0))};
    for (auto& x : p.weight.data()) x = static_cast<T>(rng.normal() * stddev);
    return p;
  }

  std::size_t in_width() const { return weight.dim(0); }
  std::size_t out_width() const { return weight.dim(1); }
};

/// fused = tapped * W + b, one row per position.
template <typename T>
BasicTensor<T> fuse(const BasicTensor<T>& tapped, const FusionParams<T>& p) {
  BLOCKSPEC_CHECK(tapped.ndim() == 2 && tapped.cols() == p.in_width(), DimensionError,
                  "fuse: tapped width " + std::to_string(tapped.ndim() == 2 ? tapped.cols() : 0) +
                      " does not match fusion input width " + std::to_string(p.in_width()));
  return ops::add_bias(ops::matmul(tapped, p.weight), p.bias);
}

/// Context key/value rows for one drafter layer: key = rope(fused * Wk) at the
/// source positions, value = fused * Wv.
template <typename T>
struct ContextKV {
  BasicTensor<T> key;
  BasicTensor<T> value;
};

template <typename T>
ContextKV<T> project_kv(const BasicTensor<T>& fused, const BasicTensor<T>& wk, const BasicTensor<T>& wv,
                        std::span<const std::int64_t> positions, std::size_t heads, bool use_rope,
                        double theta) {
  BLOCKSPEC_CHECK(positions.size() == fused.rows(), DimensionError, "project_kv: one position per fused row");
  auto k = ops::matmul(fused, wk);
  if (use_rope) k = ops::rope_apply(k, positions, heads, theta);
  return {k, ops::matmul(fused, wv)};
}

}  // namespace blockspec
