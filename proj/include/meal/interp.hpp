#pragma once

// Separable linear interpolation on (B, H, W, D, C) tensors using the
// pixel-centre (align-corners = false) grid convention.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "meal/tensor.hpp"

namespace meal {

/// 1-D linear resampling table: out[o] = (1 - t[o]) * in[i0[o]] + t[o] * in[i1[o]].
struct AxisMap {
  std::size_t in_len = 0;
  std::vector<std::size_t> i0, i1;
  std::vector<double> t;

  std::size_t out_len() const { return i0.size(); }
};

/// Maps the window [offset, offset + window) of an axis of length `in_len`
/// onto `out_len` samples with pixel-centre alignment, clamping at the window edges.
inline AxisMap make_axis_map(std::size_t in_len, std::size_t offset, std::size_t window,
                             std::size_t out_len) {
  AxisMap m;
  m.in_len = in_len;
  m.i0.resize(out_len);
  m.i1.resize(out_len);
  m.t.resize(out_len);
  const double ratio = static_cast<double>(window) / static_cast<double>(out_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(window - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, window - 1);
    m.i0[o] = offset + lo;
    m.i1[o] = offset + hi;
    m.t[o] = src - static_cast<double>(lo);
  }
  return m;
}

namespace detail {

// View of a rank-5 tensor as (outer, axis, inner) around spatial axis 1..3.
inline std::array<std::size_t, 2> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

template <class T>
Tensor<T> interp_axis(const Tensor<T>& in, std::size_t axis, const AxisMap& m) {
  Shape os = in.shape();
  const std::size_t n_in = os[axis];
  os[axis] = m.out_len();
  Tensor<T> out(os);
  const auto [outer, inner] = outer_inner(in.shape(), axis);
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t o = 0; o < m.out_len(); ++o) {
      const T t = static_cast<T>(m.t[o]);
      const T* p0 = in.data() + (a * n_in + m.i0[o]) * inner;
      const T* p1 = in.data() + (a * n_in + m.i1[o]) * inner;
      T* dst = out.data() + (a * m.out_len() + o) * inner;
      if (t == T{0}) {
        std::copy_n(p0, inner, dst);
      } else {
        for (std::size_t i = 0; i < inner; ++i) dst[i] = (T{1} - t) * p0[i] + t * p1[i];
      }
    }
  return out;
}

template <class T>
Tensor<T> interp_axis_transpose(const Tensor<T>& gout, std::size_t axis, const AxisMap& m) {
  Shape is = gout.shape();
  is[axis] = m.in_len;
  Tensor<T> gin(is);
  const auto [outer, inner] = outer_inner(gout.shape(), axis);
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t o = 0; o < m.out_len(); ++o) {
      const T t = static_cast<T>(m.t[o]);
      const T* src = gout.data() + (a * m.out_len() + o) * inner;
      T* p0 = gin.data() + (a * m.in_len + m.i0[o]) * inner;
      T* p1 = gin.data() + (a * m.in_len + m.i1[o]) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        p0[i] += (T{1} - t) * src[i];
        p1[i] += t * src[i];
      }
    }
  return gin;
}

}  // namespace detail

/// Applies per-axis maps to the H, W and D axes of a (B,H,W,D,C) tensor.
template <class T>
Tensor<T> interp_separable(const Tensor<T>& x, const std::array<AxisMap, 3>& maps) {
  require_rank5(x, "interp_separable");
  Tensor<T> y = detail::interp_axis(x, 1, maps[0]);
  y = detail::interp_axis(y, 2, maps[1]);
  return detail::interp_axis(y, 3, maps[2]);
}

template <class T>
Tensor<T> interp_separable_transpose(const Tensor<T>& g, const std::array<AxisMap, 3>& maps) {
  Tensor<T> y = detail::interp_axis_transpose(g, 3, maps[2]);
  y = detail::interp_axis_transpose(y, 2, maps[1]);
  return detail::interp_axis_transpose(y, 1, maps[0]);
}

}  // namespace meal
