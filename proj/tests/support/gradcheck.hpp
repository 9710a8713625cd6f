// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference oracle. It only evaluates the forward function and
// never touches the tape, so it is independent of the backward code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "blockspec/core/rng.hpp"
#include "blockspec/numkernel/tensor.hpp"

namespace blockspec::testing {

using GradVectors = std::vector<std::vector<double>>;

/// d(loss)/d(param) by central differences, evaluated with grad mode off.
template <typename T>
GradVectors fd_gradients(std::vector<BasicTensor<T>> params, const std::function<double()>& loss_fn,
                         double h) {
  NoGradGuard ng;
  GradVectors out;
  for (auto& p : params) {
    auto data = p.data();
    std::vector<double> g(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T orig = data[i];
      data[i] = static_cast<T>(orig + h);
      const double fp = loss_fn();
      data[i] = static_cast<T>(orig - h);
      const double fm = loss_fn();
      data[i] = orig;
      g[i] = (fp - fm) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

template <typename T>
GradVectors analytic_gradients(const std::vector<BasicTensor<T>>& params) {
  GradVectors out;
  for (const auto& p : params) {
    std::vector<double> g(p.numel(), 0.0);
    if (p.has_grad())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(p.grad()[i]);
    out.push_back(std::move(g));
  }
  return out;
}

/// max |analytic - fd| / max |fd| over every parameter element.
inline double max_relative_error(const GradVectors& analytic, const GradVectors& fd) {
  double diff = 0, ref = 0;
  for (std::size_t p = 0; p < fd.size(); ++p)
    for (std::size_t i = 0; i < fd[p].size(); ++i) {
      diff = std::max(diff, std::abs(analytic[p][i] - fd[p][i]));
      ref = std::max(ref, std::abs(fd[p][i]));
    }
  return ref > 0 ? diff / ref : diff;
}

inline std::size_t count_elements(const GradVectors& g) {
  std::size_t n = 0;
  for (const auto& v : g) n += v.size();
  return n;
}

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = true) {
  PhiloxEngine eng(seed, RngStream::kInit, 77);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(eng.normal() * scale);
  BasicTensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(grad);
  return t;
}

template <typename To, typename From>
BasicTensor<To> cast_tensor(const BasicTensor<From>& t, bool grad = true) {
  std::vector<To> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(t.data()[i]);
  BasicTensor<To> out(t.shape(), std::move(v));
  out.set_requires_grad(grad);
  return out;
}

}  // namespace blockspec::testing
