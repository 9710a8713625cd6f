// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "blockspec/numkernel/kernels.hpp"
#include "blockspec/numkernel/tensor.hpp"

namespace blockspec {

/// Boolean visibility mask of shape (queries, keys); stored densely.
/// Visible cells contribute score + 0, hidden cells score + (-inf).
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  AttentionMask() = default;
  AttentionMask(std::size_t r, std::size_t c, bool value = false)
      : rows(r), cols(c), bits(r * c, value ? 1 : 0) {}

  static AttentionMask full(std::size_t r, std::size_t c) { return {r, c, true}; }

  /// Query i sits at absolute position `offset + i`; key j at position j.
  static AttentionMask causal(std::size_t nq, std::size_t nk, std::size_t offset) {
    AttentionMask m(nq, nk);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk && j <= offset + i; ++j) m.set(i, j, true);
    return m;
  }

  bool allowed(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits[r * cols + c] = v ? 1 : 0; }
  std::size_t count_allowed() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
};

/// Read-only key/value rows that precede the tensor keys of an attention call
/// (a KV cache). Never receives gradient.
template <typename T>
struct KvPrefix {
  const T* k = nullptr;
  const T* v = nullptr;
  std::size_t rows = 0;
};

namespace ops {

namespace detail {

template <typename T>
void check_finite(std::span<const T> v, const char* op) {
  for (const T x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite output in ") + op);
}

#define BLOCKSPEC_REQUIRE(cond, msg) BLOCKSPEC_CHECK(cond, DimensionError, msg)

template <typename T>
void require_2d(const BasicTensor<T>& t, const char* op) {
  BLOCKSPEC_REQUIRE(t.ndim() == 2, std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

template <typename T>
using NodeP = blockspec::detail::Node<T>*;

template <typename T>
inline void acc_into(NodeP<T> parent, const std::vector<T>& g) {
  if (!parent->requires_grad) return;
  auto& dst = parent->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

/// a[n,k] x b[k,m]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  BLOCKSPEC_REQUIRE(b.dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) +
                                     " x " + shape_str(b.shape()));
  std::vector<T> out(n * m);
  kernels::gemm_nn(a.ptr(), b.ptr(), out.data(), n, k, m);
  detail::check_finite<T>(out, "matmul");
  auto na = a.node_ptr(), nb = b.node_ptr();
  return BasicTensor<T>::make_result({n, m}, std::move(out), {a, b}, [=](NodeP<T> o) {
    return [=]() {
      const T* g = o->grad.data();
      if (na->requires_grad) kernels::gemm_nt_acc(g, nb->data.data(), na->ensure_grad().data(), n, m, k);
      if (nb->requires_grad) kernels::gemm_tn_acc(na->data.data(), g, nb->ensure_grad().data(), n, k, m);
    };
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BLOCKSPEC_REQUIRE(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  detail::check_finite<T>(out, "add");
  auto na = a.node_ptr(), nb = b.node_ptr();
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](NodeP<T> o) {
    return [=]() {
      acc_into(na.get(), o->grad);
      acc_into(nb.get(), o->grad);
    };
  });
}

/// x[n,m] + bias[m] broadcast over rows.
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  detail::require_2d(x, "add_bias");
  const std::size_t n = x.dim(0), m = x.dim(1);
  BLOCKSPEC_REQUIRE(bias.numel() == m, "add_bias: bias width " + std::to_string(bias.numel()) +
                                         " vs " + std::to_string(m));
  std::vector<T> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.data()[i * m + j] + bias.data()[j];
  detail::check_finite<T>(out, "add_bias");
  auto nx = x.node_ptr(), nbias = bias.node_ptr();
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x, bias}, [=](NodeP<T> o) {
    return [=]() {
      acc_into(nx.get(), o->grad);
      if (nbias->requires_grad) {
        auto& db = nbias->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) db[j] += o->grad[i * m + j];
      }
    };
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BLOCKSPEC_REQUIRE(a.shape() == b.shape(),
                  "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  detail::check_finite<T>(out, "mul");
  auto na = a.node_ptr(), nb = b.node_ptr();
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](NodeP<T> o) {
    return [=]() {
      const std::size_t n = o->grad.size();
      if (na->requires_grad) {
        auto& d = na->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) d[i] += o->grad[i] * nb->data[i];
      }
      if (nb->requires_grad) {
        auto& d = nb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) d[i] += o->grad[i] * na->data[i];
      }
    };
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  detail::check_finite<T>(out, "scale");
  auto nx = x.node_ptr();
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [=](NodeP<T> o) {
    return [=]() {
      if (!nx->requires_grad) return;
      auto& d = nx->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += o->grad[i] * s;
    };
  });
}

/// Sum of all elements, as a scalar.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = 0;
  for (const T v : x.data()) acc += v;
  auto nx = x.node_ptr();
  return BasicTensor<T>::make_result({1}, {acc}, {x}, [=](NodeP<T> o) {
    return [=]() {
      if (!nx->requires_grad) return;
      auto& d = nx->ensure_grad();
      for (auto& v : d) v += o->grad[0];
    };
  });
}

/// silu(a) * b, elementwise.
template <typename T>
BasicTensor<T> silu_mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BLOCKSPEC_REQUIRE(a.shape() == b.shape(), "silu_mul: shape mismatch");
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a.data()[i];
    const T sig = T(1) / (T(1) + std::exp(-x));
    out[i] = x * sig * b.data()[i];
  }
  detail::check_finite<T>(out, "silu_mul");
  auto na = a.node_ptr(), nb = b.node_ptr();
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](NodeP<T> o) {
    return [=]() {
      for (std::size_t i = 0; i < n; ++i) {
        const T x = na->data[i];
        const T sig = T(1) / (T(1) + std::exp(-x));
        const T g = o->grad[i];
        if (na->requires_grad) na->ensure_grad()[i] += g * nb->data[i] * sig * (T(1) + x * (T(1) - sig));
        if (nb->requires_grad) nb->ensure_grad()[i] += g * x * sig;
      }
    };
  });
}

/// Row-wise RMS normalization with a learned gain: y = x / rms(x) * gain.
template <typename T>
BasicTensor<T> rmsnorm(const BasicTensor<T>& x, const BasicTensor<T>& gain, T eps = T(1e-6)) {
  detail::require_2d(x, "rmsnorm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  BLOCKSPEC_REQUIRE(gain.numel() == d, "rmsnorm: gain width mismatch");
  std::vector<T> out(n * d), inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.ptr() + i * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
    inv[i] = T(1) / std::sqrt(ss / static_cast<T>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xi[j] * inv[i] * gain.data()[j];
  }
  detail::check_finite<T>(out, "rmsnorm");
  auto nx = x.node_ptr(), ng = gain.node_ptr();
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x, gain}, [=](NodeP<T> o) {
    return [=]() {
      for (std::size_t i = 0; i < n; ++i) {
        const T* xi = nx->data.data() + i * d;
        const T* gi = o->grad.data() + i * d;
        const T r = inv[i];
        if (ng->requires_grad) {
          auto& dg = ng->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) dg[j] += gi[j] * xi[j] * r;
        }
        if (nx->requires_grad) {
          T dot = 0;
          for (std::size_t j = 0; j < d; ++j) dot += gi[j] * ng->data[j] * xi[j];
          const T c = r * r * r * dot / static_cast<T>(d);
          auto& dx = nx->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += gi[j] * ng->data[j] * r - xi[j] * c;
        }
      }
    };
  });
}

/// Rotary position embedding; row r is rotated for absolute position
/// positions[r], independently per head.
template <typename T>
BasicTensor<T> rope_apply(const BasicTensor<T>& x, std::span<const std::int64_t> positions,
                          std::size_t heads, double theta = 10000.0) {
  detail::require_2d(x, "rope_apply");
  const std::size_t n = x.dim(0), d = x.dim(1);
  BLOCKSPEC_REQUIRE(positions.size() == n, "rope_apply: one position per row required");
  BLOCKSPEC_REQUIRE(d % heads == 0 && (d / heads) % 2 == 0, "rope_apply: head width must be even");
  std::vector<T> out(x.data().begin(), x.data().end());
  kernels::rope_rotate(out.data(), n, d, heads, positions, theta, +1);
  auto nx = x.node_ptr();
  std::vector<std::int64_t> pos(positions.begin(), positions.end());
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [=](NodeP<T> o) {
    return [=]() {
      if (!nx->requires_grad) return;
      std::vector<T> g = o->grad;
      kernels::rope_rotate(g.data(), n, d, heads, std::span<const std::int64_t>(pos), theta, -1);
      acc_into(nx.get(), g);
    };
  });
}

/// Softmax over the last dimension. -inf inputs receive probability 0.
template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  const std::size_t m = x.cols(), n = x.numel() / m;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.ptr() + i * m;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, xi[j]);
    if (!std::isfinite(mx)) throw NumericError("softmax_lastdim: row has no finite entry");
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += out[i * m + j] = std::exp(xi[j] - mx);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= s;
  }
  detail::check_finite<T>(out, "softmax_lastdim");
  auto nx = x.node_ptr();
  return BasicTensor<T>::make_result(x.shape(), out, {x}, [=](NodeP<T> o) {
    return [=]() {
      if (!nx->requires_grad) return;
      auto& d = nx->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < m; ++j) dot += o->grad[i * m + j] * out[i * m + j];
        for (std::size_t j = 0; j < m; ++j)
          d[i * m + j] += out[i * m + j] * (o->grad[i * m + j] - dot);
      }
    };
  });
}

/// Rows of `table` selected by `ids`.
template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  detail::require_2d(table, "embedding_lookup");
  const std::size_t v = table.dim(0), d = table.dim(1), n = ids.size();
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    BLOCKSPEC_REQUIRE(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
                    "embedding_lookup: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(table.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  auto nt = table.node_ptr();
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return BasicTensor<T>::make_result({n, d}, std::move(out), {table}, [=](NodeP<T> o) {
    return [=]() {
      if (!nt->requires_grad) return;
      auto& g = nt->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idv[i]) * d + j] += o->grad[i * d + j];
    };
  });
}

/// One output row per pick: (source index, row within that source).
struct RowPick {
  std::uint32_t source;
  std::uint32_t row;
};

/// Assembles rows from several 2-D tensors of equal width.
template <typename T>
BasicTensor<T> gather_rows(const std::vector<BasicTensor<T>>& sources, std::span<const RowPick> picks) {
  BLOCKSPEC_REQUIRE(!sources.empty(), "gather_rows: no sources");
  const std::size_t d = sources[0].cols();
  for (const auto& s : sources) BLOCKSPEC_REQUIRE(s.cols() == d, "gather_rows: width mismatch");
  const std::size_t n = picks.size();
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sources.at(picks[i].source);
    BLOCKSPEC_REQUIRE(picks[i].row < s.rows(), "gather_rows: row out of range");
    std::copy_n(s.ptr() + picks[i].row * d, d, out.data() + i * d);
  }
  std::vector<std::shared_ptr<blockspec::detail::Node<T>>> nodes;
  for (const auto& s : sources) nodes.push_back(s.node_ptr());
  std::vector<RowPick> pk(picks.begin(), picks.end());
  return BasicTensor<T>::make_result({n, d}, std::move(out), sources, [=](NodeP<T> o) {
    return [=]() {
      for (std::size_t i = 0; i < n; ++i) {
        auto& src = nodes[pk[i].source];
        if (!src->requires_grad) continue;
        auto& g = src->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) g[pk[i].row * d + j] += o->grad[i * d + j];
      }
    };
  });
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  std::vector<RowPick> picks;
  for (std::uint32_t s = 0; s < parts.size(); ++s)
    for (std::uint32_t r = 0; r < parts[s].rows(); ++r) picks.push_back({s, r});
  return gather_rows(parts, std::span<const RowPick>(picks));
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  BLOCKSPEC_REQUIRE(begin <= end && end <= x.rows(), "slice_rows: bad range");
  std::vector<RowPick> picks;
  for (std::size_t r = begin; r < end; ++r) picks.push_back({0, static_cast<std::uint32_t>(r)});
  return gather_rows(std::vector<BasicTensor<T>>{x}, std::span<const RowPick>(picks));
}

/// Overwrites the given columns with `value` (typically -inf); those cells pass
/// no gradient.
template <typename T>
BasicTensor<T> fill_columns(const BasicTensor<T>& x, std::span<const std::int32_t> columns, T value) {
  detail::require_2d(x, "fill_columns");
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<T> out(x.data().begin(), x.data().end());
  std::vector<std::uint8_t> hit(m, 0);
  for (auto c : columns) {
    BLOCKSPEC_REQUIRE(c >= 0 && static_cast<std::size_t>(c) < m, "fill_columns: column out of range");
    hit[static_cast<std::size_t>(c)] = 1;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (hit[j]) out[i * m + j] = value;
  auto nx = x.node_ptr();
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [=](NodeP<T> o) {
    return [=]() {
      if (!nx->requires_grad) return;
      auto& g = nx->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (!hit[j]) g[i * m + j] += o->grad[i * m + j];
    };
  });
}

/// Multi-head attention. Keys/values are `prefix` rows (if any, constant)
/// followed by the rows of k/v. `mask` is (q.rows, prefix.rows + k.rows).
template <typename T>
BasicTensor<T> masked_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, const AttentionMask& mask,
                                std::size_t heads, const KvPrefix<T>& prefix = {}) {
  detail::require_2d(q, "masked_attention");
  const std::size_t nq = q.dim(0), d = q.dim(1);
  const std::size_t nself = k.defined() ? k.rows() : 0;
  if (k.defined()) {
    BLOCKSPEC_REQUIRE(k.cols() == d && v.cols() == d && v.rows() == nself,
                    "masked_attention: key/value shape mismatch");
  }
  BLOCKSPEC_REQUIRE(d % heads == 0, "masked_attention: width not divisible by heads");
  const std::size_t nk = prefix.rows + nself;
  BLOCKSPEC_REQUIRE(mask.rows == nq && mask.cols == nk,
                  "masked_attention: mask is " + std::to_string(mask.rows) + "x" +
                      std::to_string(mask.cols) + ", expected " + std::to_string(nq) + "x" +
                      std::to_string(nk));
  std::vector<kernels::KeySegment<T>> segs;
  if (prefix.rows) segs.push_back({prefix.k, prefix.v, prefix.rows});
  if (nself) segs.push_back({k.ptr(), v.ptr(), nself});
  const bool record = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  std::vector<T> out(nq * d);
  std::vector<T> probs(record ? heads * nq * nk : 0);
  kernels::attention_forward<T>(q.ptr(), nq, segs, mask.bits.data(), d, heads, out.data(),
                                record ? probs.data() : nullptr);
  detail::check_finite<T>(out, "masked_attention");
  if (!record) return BasicTensor<T>({nq, d}, std::move(out));
  auto nqn = q.node_ptr(), nkn = k.node_ptr(), nvn = v.node_ptr();
  const KvPrefix<T> pre = prefix;
  auto factory = [=, probs = std::move(probs), bits = mask.bits](NodeP<T> o) mutable {
    return [=, probs = std::move(probs), bits = std::move(bits)]() {
      std::vector<kernels::KeySegment<T>> s;
      if (pre.rows) s.push_back({pre.k, pre.v, pre.rows});
      if (nself) {
        T* dk = nkn->requires_grad ? nkn->ensure_grad().data() : nullptr;
        T* dv = nvn->requires_grad ? nvn->ensure_grad().data() : nullptr;
        s.push_back({nkn->data.data(), nvn->data.data(), nself, dk, dv});
      }
      T* dq = nqn->requires_grad ? nqn->ensure_grad().data() : nullptr;
      kernels::attention_backward<T>(nqn->data.data(), nq, s, bits.data(), d, heads, probs.data(),
                                     o->grad.data(), dq);
    };
  };
  return BasicTensor<T>::make_result({nq, d}, std::move(out), {q, k, v}, factory);
}

/// Weighted token cross-entropy:
///   sum_i weights[i] * CE(logits[i], labels[i]) / normalizer
/// over rows with labels[i] >= 0 (negative labels are ignored).
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                             std::span<const T> weights, T normalizer) {
  detail::require_2d(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  BLOCKSPEC_REQUIRE(labels.size() == n && weights.size() == n, "cross_entropy: one label/weight per row");
  BLOCKSPEC_REQUIRE(normalizer > T(0), "cross_entropy: normalizer must be positive");
  std::vector<T> probs(n * m, T(0));
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    const T* li = logits.ptr() + i * m;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, li[j]);
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += probs[i * m + j] = std::exp(li[j] - mx);
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] /= s;
    const T ce = mx + std::log(s) - li[static_cast<std::size_t>(labels[i])];
    if (!std::isfinite(ce)) throw NumericError("cross_entropy: non-finite loss (label logit masked?)");
    total += weights[i] * ce;
  }
  total /= normalizer;
  auto nl = logits.node_ptr();
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::vector<T> w(weights.begin(), weights.end());
  return BasicTensor<T>::make_result({1}, {total}, {logits}, [=](NodeP<T> o) {
    return [=]() {
      if (!nl->requires_grad) return;
      auto& g = nl->ensure_grad();
      const T go = o->grad[0] / normalizer;
      for (std::size_t i = 0; i < n; ++i) {
        if (lab[i] < 0) continue;
        const T c = go * w[i];
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += c * probs[i * m + j];
        g[i * m + static_cast<std::size_t>(lab[i])] -= c;
      }
    };
  });
}

/// SwiGLU feed-forward: (silu(x Wg) * (x Wu)) Wd.
template <typename T>
BasicTensor<T> silu_mlp(const BasicTensor<T>& x, const BasicTensor<T>& w_gate,
                        const BasicTensor<T>& w_up, const BasicTensor<T>& w_down) {
  return matmul(silu_mul(matmul(x, w_gate), matmul(x, w_up)), w_down);
}

}  // namespace ops
}  // namespace blockspec
