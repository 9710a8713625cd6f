// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw CPU kernels behind the tensor ops.
//
// Forward kernels are batch-invariant: every output element is produced by a
// fixed sequence of fused multiply-adds whose order does not depend on how
// many rows (queries) are processed together. Decoding one token at a time and
// verifying a block of tokens in one pass therefore yield bitwise-identical
// logits, which is what makes greedy speculative decoding exactly lossless.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace blockspec::kernels {

/// Per-thread floating-point operation counters (multiply-add = 2 flops).
struct FlopCounter {
  std::uint64_t matmul = 0;
  std::uint64_t attention = 0;
  std::uint64_t total() const { return matmul + attention; }
};

inline FlopCounter& flops() {
  thread_local FlopCounter counter;
  return counter;
}

namespace detail {

template <typename T>
constexpr std::size_t column_tile() {
  return 64 / sizeof(T) * 4;  // four 512-bit vectors
}

template <typename T, std::size_t R, std::size_t JT>
inline void gemm_tile_full(const T* a, const T* b, T* c, std::size_t k, std::size_t m,
                           std::size_t i, std::size_t j0) {
  T acc[R][JT] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * m + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[(i + r) * k + p];
      for (std::size_t jj = 0; jj < JT; ++jj) acc[r][jj] = std::fma(av, brow[jj], acc[r][jj]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    std::copy(acc[r], acc[r] + JT, c + (i + r) * m + j0);
}

template <typename T, std::size_t JT>
inline void gemm_tile_partial(const T* a, const T* b, T* c, std::size_t k, std::size_t m,
                              std::size_t i, std::size_t j0, std::size_t jw) {
  T acc[JT] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * m + j0;
    const T av = a[i * k + p];
    for (std::size_t jj = 0; jj < jw; ++jj) acc[jj] = std::fma(av, brow[jj], acc[jj]);
  }
  std::copy(acc, acc + jw, c + i * m + j0);
}

}  // namespace detail

/// c[n,m] = a[n,k] * b[k,m]. Each c[i,j] is fma-accumulated over p = 0..k-1
/// starting from zero, independent of n.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  constexpr std::size_t JT = detail::column_tile<T>();
  constexpr std::size_t R = 4;
  flops().matmul += 2ull * n * k * m;
  for (std::size_t j0 = 0; j0 < m; j0 += JT) {
    const std::size_t jw = std::min(JT, m - j0);
    std::size_t i = 0;
    if (jw == JT) {
      for (; i + R <= n; i += R) detail::gemm_tile_full<T, R, JT>(a, b, c, k, m, i, j0);
      for (; i < n; ++i) detail::gemm_tile_full<T, 1, JT>(a, b, c, k, m, i, j0);
    } else {
      for (; i < n; ++i) detail::gemm_tile_partial<T, JT>(a, b, c, k, m, i, j0, jw);
    }
  }
}

namespace detail {

// Rows p..p+R-1 of c, columns j0..j0+jw-1, accumulated over i = 0..n-1 in order.
template <typename T, std::size_t R, std::size_t JT>
inline void gemm_tn_tile(const T* a, const T* g, T* c, std::size_t n, std::size_t k, std::size_t m, std::size_t p,
                         std::size_t j0, std::size_t jw) {
  T acc[R][JT];
  for (std::size_t r = 0; r < R; ++r) std::copy(c + (p + r) * m + j0, c + (p + r) * m + j0 + jw, acc[r]);
  for (std::size_t i = 0; i < n; ++i) {
    const T* grow = g + i * m + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[i * k + p + r];
      if (jw == JT) {
        for (std::size_t jj = 0; jj < JT; ++jj) acc[r][jj] = std::fma(av, grow[jj], acc[r][jj]);
      } else {
        for (std::size_t jj = 0; jj < jw; ++jj) acc[r][jj] = std::fma(av, grow[jj], acc[r][jj]);
      }
    }
  }
  for (std::size_t r = 0; r < R; ++r) std::copy(acc[r], acc[r] + jw, c + (p + r) * m + j0);
}

}  // namespace detail

/// c[k,m] += a[n,k]^T * g[n,m]
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* c, std::size_t n, std::size_t k, std::size_t m) {
  constexpr std::size_t JT = detail::column_tile<T>();
  constexpr std::size_t R = 4;
  flops().matmul += 2ull * n * k * m;
  for (std::size_t j0 = 0; j0 < m; j0 += JT) {
    const std::size_t jw = std::min(JT, m - j0);
    std::size_t p = 0;
    for (; p + R <= k; p += R) detail::gemm_tn_tile<T, R, JT>(a, g, c, n, k, m, p, j0, jw);
    for (; p < k; ++p) detail::gemm_tn_tile<T, 1, JT>(a, g, c, n, k, m, p, j0, jw);
  }
}

/// c[n,k] += g[n,m] * b[k,m]^T
template <typename T>
void gemm_nt_acc(const T* g, const T* b, T* c, std::size_t n, std::size_t m, std::size_t k) {
  std::vector<T> bt(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  std::vector<T> tmp(n * k);
  gemm_nn(g, bt.data(), tmp.data(), n, m, k);
  for (std::size_t i = 0; i < n * k; ++i) c[i] += tmp[i];
}

/// A contiguous run of key/value rows (row stride = model width).
template <typename T>
struct KeySegment {
  const T* k = nullptr;
  const T* v = nullptr;
  std::size_t rows = 0;
  T* dk = nullptr;  // backward only; null when the segment takes no gradient
  T* dv = nullptr;
};

namespace detail {

template <typename T>
struct KeyIndex {
  std::vector<const T*> k, v;
  std::vector<T*> dk, dv;
};

template <typename T>
KeyIndex<T> index_keys(std::span<const KeySegment<T>> segs, std::size_t d) {
  KeyIndex<T> idx;
  for (const auto& s : segs) {
    for (std::size_t r = 0; r < s.rows; ++r) {
      idx.k.push_back(s.k + r * d);
      idx.v.push_back(s.v + r * d);
      idx.dk.push_back(s.dk ? s.dk + r * d : nullptr);
      idx.dv.push_back(s.dv ? s.dv + r * d : nullptr);
    }
  }
  return idx;
}

// Gathers head h of every key row into a [dh, nk] column-major-by-key block.
template <typename T>
void transpose_head(const std::vector<const T*>& rows, std::size_t off, std::size_t dh,
                    std::vector<T>& out) {
  const std::size_t nk = rows.size();
  out.resize(dh * nk);
  for (std::size_t j = 0; j < nk; ++j)
    for (std::size_t e = 0; e < dh; ++e) out[e * nk + j] = rows[j][off + e];
}

}  // namespace detail

inline constexpr std::size_t kDirectScoreRows = 4;

/// Multi-head scaled dot-product attention with a boolean mask.
///
/// q: [nq, d]; keys: concatenation of `segs` ([nk, d] in total); allowed:
/// [nq, nk] (nonzero = visible). Rows with no visible key produce zeros.
/// `probs`, when non-null, receives [heads, nq, nk] attention weights.
template <typename T>
void attention_forward(const T* q, std::size_t nq, std::span<const KeySegment<T>> segs,
                       const std::uint8_t* allowed, std::size_t d, std::size_t heads, T* out,
                       T* probs) {
  const std::size_t dh = d / heads;
  auto idx = detail::index_keys(segs, d);
  const std::size_t nk = idx.k.size();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> kt, s(nk);
  std::fill(out, out + nq * d, T(0));
  std::uint64_t visible = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    // Both score paths accumulate e = 0..dh-1 in order, so they agree bitwise.
    const bool transposed = nq > kDirectScoreRows;
    if (transposed) detail::transpose_head(idx.k, off, dh, kt);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::uint8_t* mrow = allowed + i * nk;
      T* prow = probs ? probs + (h * nq + i) * nk : nullptr;
      std::fill(s.begin(), s.end(), T(0));
      const T* qi = q + i * d + off;
      if (transposed) {
        for (std::size_t e = 0; e < dh; ++e) {
          const T qv = qi[e];
          const T* krow = kt.data() + e * nk;
          for (std::size_t j = 0; j < nk; ++j) s[j] = std::fma(qv, krow[j], s[j]);
        }
      } else {
        for (std::size_t j = 0; j < nk; ++j) {
          if (!mrow[j]) continue;
          const T* kj = idx.k[j] + off;
          T acc = 0;
          for (std::size_t e = 0; e < dh; ++e) acc = std::fma(qi[e], kj[e], acc);
          s[j] = acc;
        }
      }
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mrow[j]) continue;
        s[j] = s[j] * scale;
        mx = std::max(mx, s[j]);
      }
      if (prow) std::fill(prow, prow + nk, T(0));
      if (mx == -std::numeric_limits<T>::infinity()) continue;
      T sum = 0;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mrow[j]) continue;
        s[j] = std::exp(s[j] - mx);
        sum += s[j];
      }
      T* oi = out + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mrow[j]) continue;
        const T pj = s[j] / sum;
        if (prow) prow[j] = pj;
        const T* vj = idx.v[j] + off;
        for (std::size_t e = 0; e < dh; ++e) oi[e] = std::fma(pj, vj[e], oi[e]);
        ++visible;
      }
    }
  }
  flops().attention += 2ull * nq * nk * d + 2ull * visible * dh;
}

/// Gradient of `attention_forward`. Accumulates into dq (may be null) and into
/// the dk/dv pointers of each segment.
template <typename T>
void attention_backward(const T* q, std::size_t nq, std::span<const KeySegment<T>> segs,
                        const std::uint8_t* allowed, std::size_t d, std::size_t heads,
                        const T* probs, const T* dout, T* dq) {
  const std::size_t dh = d / heads;
  auto idx = detail::index_keys(segs, d);
  const std::size_t nk = idx.k.size();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> vt, dp(nk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    detail::transpose_head(idx.v, off, dh, vt);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::uint8_t* mrow = allowed + i * nk;
      const T* prow = probs + (h * nq + i) * nk;
      const T* doi = dout + i * d + off;
      std::fill(dp.begin(), dp.end(), T(0));
      for (std::size_t e = 0; e < dh; ++e) {
        const T g = doi[e];
        const T* vrow = vt.data() + e * nk;
        for (std::size_t j = 0; j < nk; ++j) dp[j] = std::fma(g, vrow[j], dp[j]);
      }
      T rowdot = 0;
      for (std::size_t j = 0; j < nk; ++j)
        if (mrow[j]) rowdot += prow[j] * dp[j];
      const T* qi = q + i * d + off;
      T* dqi = dq ? dq + i * d + off : nullptr;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mrow[j] || prow[j] == T(0)) continue;
        const T ds = prow[j] * (dp[j] - rowdot) * scale;
        if (dqi) {
          const T* kj = idx.k[j] + off;
          for (std::size_t e = 0; e < dh; ++e) dqi[e] = std::fma(ds, kj[e], dqi[e]);
        }
        if (T* dkj = idx.dk[j]) {
          dkj += off;
          for (std::size_t e = 0; e < dh; ++e) dkj[e] = std::fma(ds, qi[e], dkj[e]);
        }
        if (T* dvj = idx.dv[j]) {
          dvj += off;
          const T pj = prow[j];
          for (std::size_t e = 0; e < dh; ++e) dvj[e] = std::fma(pj, doi[e], dvj[e]);
        }
      }
    }
  }
  flops().attention += 4ull * nq * nk * d;
}

/// Rotary position embedding applied in place to every head of each row.
/// `sign` = -1 applies the inverse rotation (used by the backward pass).
template <typename T>
void rope_rotate(T* x, std::size_t n, std::size_t d, std::size_t heads,
                 std::span<const std::int64_t> positions, double theta, int sign) {
  const std::size_t dh = d / heads;
  const std::size_t half = dh / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t i = 0; i < half; ++i)
    inv_freq[i] = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
  std::vector<T> cs(half), sn(half);
  for (std::size_t r = 0; r < n; ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (std::size_t i = 0; i < half; ++i) {
      const double ang = pos * inv_freq[i];
      cs[i] = static_cast<T>(std::cos(ang));
      sn[i] = static_cast<T>(sign * std::sin(ang));
    }
    for (std::size_t h = 0; h < heads; ++h) {
      T* xh = x + r * d + h * dh;
      for (std::size_t i = 0; i < half; ++i) {
        const T a = xh[2 * i], b = xh[2 * i + 1];
        xh[2 * i] = a * cs[i] - b * sn[i];
        xh[2 * i + 1] = a * sn[i] + b * cs[i];
      }
    }
  }
}

}  // namespace blockspec::kernels
