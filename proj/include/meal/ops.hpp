#pragma once

// Differentiable tensor operations on Var<T>. All volumetric ops use the
// (B, H, W, D, C) layout.

// Eigen evaluates tiny products coefficient-wise with a summation order that
// depends on buffer alignment; routing every product through GEMM keeps
// repeated forward passes bitwise identical.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "meal/autograd.hpp"
#include "meal/rng.hpp"

namespace meal {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = a.value() + b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = a.value() - b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor<T> g = self.grad;
      g *= T{-1};
      self.inputs[1]->accumulate(std::move(g));
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  out *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    Tensor<T> g = self.grad;
    g *= s;
    self.inputs[0]->accumulate(std::move(g));
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v += s;
  return make_result<T>(std::move(out), {a},
                        [](Node<T>& self) { self.inputs[0]->accumulate(self.grad); });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = v > T{0} ? v : T{0};
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Tensor<T> g = self.grad;
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > T{0})) g[i] = T{0};
    self.inputs[0]->accumulate(std::move(g));
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = T{1} / (T{1} + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Tensor<T> g = self.grad;
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (T{1} - y[i]);
    self.inputs[0]->accumulate(std::move(g));
  });
}

/// Inverted dropout: kept units are scaled by 1/(1-p). Identity when not training.
template <class T>
Var<T> dropout(const Var<T>& x, double p, bool training, RngStream* rng) {
  if (!training || p <= 0.0) return x;
  if (!rng) throw ParameterError("dropout: training mode requires an RngStream");
  if (p >= 1.0) throw ParameterError("dropout: rate must be below 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.vec()) m = rng->uniform() >= p ? keep_scale : T{0};
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
    self.inputs[0]->accumulate(std::move(g));
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> mean_all(const Var<T>& x) {
  const T n = static_cast<T>(x.value().size());
  Tensor<T> out(Shape{1}, x.value().sum() / n);
  return make_result<T>(std::move(out), {x}, [n](Node<T>& self) {
    Tensor<T> g(self.inputs[0]->value.shape(), self.grad[0] / n);
    self.inputs[0]->accumulate(std::move(g));
  });
}

template <class T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  pred.value().check_same(target.value(), "mse");
  const auto& p = pred.value();
  const auto& t = target.value();
  const T n = static_cast<T>(p.size());
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  return make_result<T>(Tensor<T>(Shape{1}, acc / n), {pred, target}, [n](Node<T>& self) {
    const auto& p = self.inputs[0]->value;
    const auto& t = self.inputs[1]->value;
    const T s = T{2} * self.grad[0] / n;
    Tensor<T> g(p.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = s * (p[i] - t[i]);
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(g);
    if (self.inputs[1]->requires_grad) {
      g *= T{-1};
      self.inputs[1]->accumulate(std::move(g));
    }
  });
}

template <class T>
Var<T> mae(const Var<T>& pred, const Var<T>& target) {
  pred.value().check_same(target.value(), "mae");
  const auto& p = pred.value();
  const auto& t = target.value();
  const T n = static_cast<T>(p.size());
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
  return make_result<T>(Tensor<T>(Shape{1}, acc / n), {pred, target}, [n](Node<T>& self) {
    const auto& p = self.inputs[0]->value;
    const auto& t = self.inputs[1]->value;
    const T s = self.grad[0] / n;
    Tensor<T> g(p.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T d = p[i] - t[i];
      g[i] = d > T{0} ? s : (d < T{0} ? -s : T{0});
    }
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(g);
    if (self.inputs[1]->requires_grad) {
      g *= T{-1};
      self.inputs[1]->accumulate(std::move(g));
    }
  });
}

/// Global average pooling over (H, W, D): (B,H,W,D,C) -> (B,C).
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank5(x.value(), "global_avg_pool");
  const auto& s = x.shape();
  const std::size_t B = s[0], S = s[1] * s[2] * s[3], C = s[4];
  Tensor<T> out(Shape{B, C});
  const T* xp = x.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < S; ++v)
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += xp[(b * S + v) * C + c];
  out *= T{1} / static_cast<T>(S);
  return make_result<T>(std::move(out), {x}, [B, S, C](Node<T>& self) {
    Tensor<T> g(self.inputs[0]->value.shape());
    const T inv = T{1} / static_cast<T>(S);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t v = 0; v < S; ++v)
        for (std::size_t c = 0; c < C; ++c) g[(b * S + v) * C + c] = self.grad[b * C + c] * inv;
    self.inputs[0]->accumulate(std::move(g));
  });
}

// ---------------------------------------------------------------- dense

/// y = x W^T (+ bias) for x of shape (B, in), W of shape (out, in).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = {}) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw ShapeError("linear: incompatible shapes " + shape_str(xs) + " and " + shape_str(ws));
  const std::size_t B = xs[0], In = xs[1], Out = ws[0];
  Tensor<T> out(Shape{B, Out});
  ConstMatrixMap<T> X(x.value().data(), B, In);
  ConstMatrixMap<T> W(weight.value().data(), Out, In);
  MatrixMap<T> Y(out.data(), B, Out);
  Y.noalias() = X * W.transpose();
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Out; ++o) out[b * Out + o] += bias.value()[o];
    inputs.push_back(bias);
  }
  return make_result<T>(std::move(out), std::move(inputs), [B, In, Out](Node<T>& self) {
    ConstMatrixMap<T> G(self.grad.data(), B, Out);
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    if (xin.requires_grad) {
      Tensor<T> gx(xin.value.shape());
      MatrixMap<T>(gx.data(), B, In).noalias() =
          G * ConstMatrixMap<T>(win.value.data(), Out, In);
      xin.accumulate(std::move(gx));
    }
    if (win.requires_grad) {
      Tensor<T> gw(win.value.shape());
      MatrixMap<T>(gw.data(), Out, In).noalias() =
          G.transpose() * ConstMatrixMap<T>(xin.value.data(), B, In);
      win.accumulate(std::move(gw));
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor<T> gb(Shape{Out});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Out; ++o) gb[o] += self.grad[b * Out + o];
      self.inputs[2]->accumulate(std::move(gb));
    }
  });
}

/// Softmax over the last axis of a (B, K) tensor.
template <class T>
Var<T> softmax_last(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw ShapeError("softmax_last: expected (B,K)");
  const std::size_t B = s[0], K = s[1];
  Tensor<T> out(s);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = x.value().data() + b * K;
    const T m = *std::max_element(row, row + K);
    T z{0};
    for (std::size_t k = 0; k < K; ++k) z += (out[b * K + k] = std::exp(row[k] - m));
    for (std::size_t k = 0; k < K; ++k) out[b * K + k] /= z;
  }
  return make_result<T>(std::move(out), {x}, [B, K](Node<T>& self) {
    Tensor<T> g(self.value.shape());
    for (std::size_t b = 0; b < B; ++b) {
      T dot{0};
      for (std::size_t k = 0; k < K; ++k) dot += self.grad[b * K + k] * self.value[b * K + k];
      for (std::size_t k = 0; k < K; ++k)
        g[b * K + k] = self.value[b * K + k] * (self.grad[b * K + k] - dot);
    }
    self.inputs[0]->accumulate(std::move(g));
  });
}

// ---------------------------------------------------------------- channels

/// Concatenates along the last axis. All leading dimensions must agree.
template <class T>
Var<T> concat_last(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = xs[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape l = x.shape();
    widths.push_back(l.back());
    total += l.back();
    l.pop_back();
    if (l != lead)
      throw ShapeError("concat_last: leading shape mismatch " + shape_str(xs[0].shape()) +
                       " vs " + shape_str(x.shape()));
  }
  Shape os = lead;
  os.push_back(total);
  Tensor<T> out(os);
  const std::size_t rows = shape_numel(lead);
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const T* src = xs[i].value().data();
    const std::size_t w = widths[i];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * w, w, out.data() + r * total + off);
    off += w;
  }
  return make_result<T>(std::move(out), xs, [widths, rows, total](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t w = widths[i];
      if (self.inputs[i]->requires_grad) {
        Tensor<T> g(self.inputs[i]->value.shape());
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(self.grad.data() + r * total + off, w, g.data() + r * w);
        self.inputs[i]->accumulate(std::move(g));
      }
      off += w;
    }
  });
}

/// sum_k alpha[b,k] * h_k[b,...] for K same-shaped (B,...) inputs and alpha of shape (B,K).
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& hs, const Var<T>& alpha) {
  if (hs.empty()) throw ShapeError("weighted_sum: no inputs");
  const Shape& s = hs[0].shape();
  const std::size_t K = hs.size(), B = s[0], per = shape_numel(s) / B;
  if (alpha.shape() != Shape{B, K})
    throw ShapeError("weighted_sum: alpha must be (B,K), got " + shape_str(alpha.shape()));
  for (const auto& h : hs)
    if (h.shape() != s) throw ShapeError("weighted_sum: stream shape mismatch");
  Tensor<T> out(s);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t b = 0; b < B; ++b) {
      const T a = alpha.value()[b * K + k];
      const T* src = hs[k].value().data() + b * per;
      T* dst = out.data() + b * per;
      for (std::size_t i = 0; i < per; ++i) dst[i] += a * src[i];
    }
  std::vector<Var<T>> inputs = hs;
  inputs.push_back(alpha);
  return make_result<T>(std::move(out), std::move(inputs), [K, B, per](Node<T>& self) {
    const auto& av = self.inputs[K]->value;
    Tensor<T> galpha(Shape{B, K});
    for (std::size_t k = 0; k < K; ++k) {
      auto& hk = *self.inputs[k];
      Tensor<T> g;
      if (hk.requires_grad) g = Tensor<T>(hk.value.shape());
      for (std::size_t b = 0; b < B; ++b) {
        const T a = av[b * K + k];
        const T* gp = self.grad.data() + b * per;
        const T* hp = hk.value.data() + b * per;
        T dot{0};
        for (std::size_t i = 0; i < per; ++i) dot += gp[i] * hp[i];
        galpha[b * K + k] = dot;
        if (hk.requires_grad)
          for (std::size_t i = 0; i < per; ++i) g[b * per + i] = a * gp[i];
      }
      if (hk.requires_grad) hk.accumulate(std::move(g));
    }
    if (self.inputs[K]->requires_grad) self.inputs[K]->accumulate(std::move(galpha));
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

/// Gathers k^3 neighbourhoods of `rows` consecutive voxels starting at flat
/// voxel index `v0` of sample `b` into a row-major (rows x k^3*C) matrix.
template <class T>
void im2col(const Tensor<T>& x, std::size_t b, std::size_t v0, std::size_t rows, std::size_t k,
            std::size_t pad, T* col) {
  const auto& s = x.shape();
  const std::size_t H = s[1], W = s[2], D = s[3], C = s[4];
  const std::size_t K = k * k * k * C;
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t v = v0 + r;
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(v / (W * D));
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>((v / D) % W);
    const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(v % D);
    T* dst = col + r * K;
    for (std::size_t a = 0; a < k; ++a) {
      const std::ptrdiff_t hh = h + static_cast<std::ptrdiff_t>(a) - p;
      const bool hok = hh >= 0 && hh < static_cast<std::ptrdiff_t>(H);
      for (std::size_t bb = 0; bb < k; ++bb) {
        const std::ptrdiff_t ww = w + static_cast<std::ptrdiff_t>(bb) - p;
        const bool wok = hok && ww >= 0 && ww < static_cast<std::ptrdiff_t>(W);
        for (std::size_t c = 0; c < k; ++c, dst += C) {
          const std::ptrdiff_t dd = d + static_cast<std::ptrdiff_t>(c) - p;
          if (wok && dd >= 0 && dd < static_cast<std::ptrdiff_t>(D)) {
            const T* src = x.data() + x.index5(b, hh, ww, dd, 0);
            std::copy_n(src, C, dst);
          } else {
            std::fill_n(dst, C, T{0});
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(Tensor<T>& gx, std::size_t b, std::size_t v0, std::size_t rows, std::size_t k,
                std::size_t pad, const T* col) {
  const auto& s = gx.shape();
  const std::size_t H = s[1], W = s[2], D = s[3], C = s[4];
  const std::size_t K = k * k * k * C;
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t v = v0 + r;
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(v / (W * D));
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>((v / D) % W);
    const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(v % D);
    const T* src = col + r * K;
    for (std::size_t a = 0; a < k; ++a) {
      const std::ptrdiff_t hh = h + static_cast<std::ptrdiff_t>(a) - p;
      const bool hok = hh >= 0 && hh < static_cast<std::ptrdiff_t>(H);
      for (std::size_t bb = 0; bb < k; ++bb) {
        const std::ptrdiff_t ww = w + static_cast<std::ptrdiff_t>(bb) - p;
        const bool wok = hok && ww >= 0 && ww < static_cast<std::ptrdiff_t>(W);
        for (std::size_t c = 0; c < k; ++c, src += C) {
          const std::ptrdiff_t dd = d + static_cast<std::ptrdiff_t>(c) - p;
          if (wok && dd >= 0 && dd < static_cast<std::ptrdiff_t>(D)) {
            T* dst = gx.data() + gx.index5(b, hh, ww, dd, 0);
            for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

inline std::size_t conv_chunk_rows(std::size_t voxels, std::size_t K) {
  constexpr std::size_t kBudget = std::size_t{1} << 21;  // elements per im2col chunk
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(K, 1), 1, voxels);
}

}  // namespace detail

/// Stride-1 "same" cubic convolution:
///   out[q] = bias + sum_o x[q + o - pad] * weight[o]
/// with weight of shape (k, k, k, Cin, Cout) and zero padding outside the grid.
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t pad) {
  require_rank5(x.value(), "conv3d");
  const auto& ws = weight.shape();
  if (ws.size() != 5 || ws[0] != ws[1] || ws[1] != ws[2])
    throw ShapeError("conv3d: weight must be (k,k,k,Cin,Cout), got " + shape_str(ws));
  const auto& xs = x.shape();
  const std::size_t k = ws[0], Ci = ws[3], Co = ws[4];
  if (xs[4] != Ci)
    throw ShapeError("conv3d: input has " + std::to_string(xs[4]) + " channels, weight expects " +
                     std::to_string(Ci));
  if (2 * pad != k - 1 && pad != k - 1 && pad != 0)
    throw ShapeError("conv3d: unsupported padding");
  const std::size_t B = xs[0], V = xs[1] * xs[2] * xs[3], K = k * k * k * Ci;
  Shape os = xs;
  os[4] = Co;
  Tensor<T> out(os);
  ConstMatrixMap<T> Wm(weight.value().data(), K, Co);
  const bool pointwise = (k == 1);
  const std::size_t chunk = detail::conv_chunk_rows(V, K);
  std::vector<T> col(pointwise ? 0 : chunk * K);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v0 = 0; v0 < V; v0 += chunk) {
      const std::size_t rows = std::min(chunk, V - v0);
      MatrixMap<T> Y(out.data() + (b * V + v0) * Co, rows, Co);
      if (pointwise) {
        Y.noalias() = ConstMatrixMap<T>(x.value().data() + (b * V + v0) * Ci, rows, Ci) * Wm;
      } else {
        detail::im2col(x.value(), b, v0, rows, k, pad, col.data());
        Y.noalias() = ConstMatrixMap<T>(col.data(), rows, K) * Wm;
      }
    }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) {
    if (bias.value().size() != Co) throw ShapeError("conv3d: bias length mismatch");
    const T* bp = bias.value().data();
    for (std::size_t i = 0; i < B * V; ++i)
      for (std::size_t c = 0; c < Co; ++c) out[i * Co + c] += bp[c];
    inputs.push_back(bias);
  }
  return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    const Tensor<T>& xin = self.inputs[0]->value;
    auto& wnode = *self.inputs[1];
    const bool need_x = self.inputs[0]->requires_grad;
    const bool need_w = wnode.requires_grad;
    ConstMatrixMap<T> Wm(wnode.value.data(), K, Co);
    Tensor<T> gx;
    if (need_x) gx = Tensor<T>(xin.shape());
    Tensor<T> gw;
    if (need_w) gw = Tensor<T>(wnode.value.shape());
    std::vector<T> col(pointwise ? 0 : chunk * K);
    std::vector<T> dcol(pointwise || !need_x ? 0 : chunk * K);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t v0 = 0; v0 < V; v0 += chunk) {
        const std::size_t rows = std::min(chunk, V - v0);
        ConstMatrixMap<T> G(self.grad.data() + (b * V + v0) * Co, rows, Co);
        if (pointwise) {
          if (need_w)
            MatrixMap<T>(gw.data(), K, Co).noalias() +=
                ConstMatrixMap<T>(xin.data() + (b * V + v0) * Ci, rows, Ci).transpose() * G;
          if (need_x)
            MatrixMap<T>(gx.data() + (b * V + v0) * Ci, rows, Ci).noalias() = G * Wm.transpose();
        } else {
          if (need_w) {
            detail::im2col(xin, b, v0, rows, k, pad, col.data());
            MatrixMap<T>(gw.data(), K, Co).noalias() +=
                ConstMatrixMap<T>(col.data(), rows, K).transpose() * G;
          }
          if (need_x) {
            MatrixMap<T>(dcol.data(), rows, K).noalias() = G * Wm.transpose();
            detail::col2im_add(gx, b, v0, rows, k, pad, dcol.data());
          }
        }
      }
    if (need_x) self.inputs[0]->accumulate(std::move(gx));
    if (need_w) wnode.accumulate(std::move(gw));
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor<T> gb(Shape{Co});
      for (std::size_t i = 0; i < B * V; ++i)
        for (std::size_t c = 0; c < Co; ++c) gb[c] += self.grad[i * Co + c];
      self.inputs[2]->accumulate(std::move(gb));
    }
  });
}

/// Reverses the three spatial axes of a (k,k,k,Cin,Cout) kernel.
template <class T>
Var<T> flip_kernel(const Var<T>& w) {
  const auto& s = w.shape();
  const std::size_t k = s[0], block = s[3] * s[4];
  auto flip = [k, block](const Tensor<T>& in) {
    Tensor<T> out(in.shape());
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t c = 0; c < k; ++c) {
          const std::size_t src = ((a * k + b) * k + c) * block;
          const std::size_t dst = (((k - 1 - a) * k + (k - 1 - b)) * k + (k - 1 - c)) * block;
          std::copy_n(in.data() + src, block, out.data() + dst);
        }
    return out;
  };
  return make_result<T>(flip(w.value()), {w},
                        [flip](Node<T>& self) { self.inputs[0]->accumulate(flip(self.grad)); });
}

/// Stride-1 transposed convolution cropped to the input size:
///   out[q] = bias + sum_o x[q - o] * weight[o].
template <class T>
Var<T> conv_transpose3d_same(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const std::size_t k = weight.shape()[0];
  return conv3d(x, flip_kernel(weight), bias, k - 1);
}

// ---------------------------------------------------------------- resampling

/// 2x2x2 max pooling with stride 2; spatial dims must be even.
template <class T>
Var<T> max_pool2(const Var<T>& x) {
  require_rank5(x.value(), "max_pool2");
  const auto& s = x.shape();
  if (s[1] % 2 || s[2] % 2 || s[3] % 2)
    throw ShapeError("max_pool2: spatial dims must be even, got " + shape_str(s));
  const std::size_t B = s[0], H = s[1] / 2, W = s[2] / 2, D = s[3] / 2, C = s[4];
  Tensor<T> out(Shape{B, H, W, D, C});
  std::vector<std::uint32_t> arg(out.size());
  const auto& xv = x.value();
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t c = 0; c < C; ++c, ++o) {
            std::size_t best = xv.index5(b, 2 * h, 2 * w, 2 * d, c);
            for (std::size_t i = 0; i < 8; ++i) {
              const std::size_t idx =
                  xv.index5(b, 2 * h + (i >> 2), 2 * w + ((i >> 1) & 1), 2 * d + (i & 1), c);
              if (xv[idx] > xv[best]) best = idx;
            }
            out[o] = xv[best];
            arg[o] = static_cast<std::uint32_t>(best);
          }
  return make_result<T>(std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
    Tensor<T> g(self.inputs[0]->value.shape());
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    self.inputs[0]->accumulate(std::move(g));
  });
}

/// Nearest-neighbour x2 upsampling of all spatial axes.
template <class T>
Var<T> upsample_nearest2(const Var<T>& x) {
  require_rank5(x.value(), "upsample_nearest2");
  const auto& s = x.shape();
  const std::size_t B = s[0], H = s[1], W = s[2], D = s[3], C = s[4];
  Tensor<T> out(Shape{B, 2 * H, 2 * W, 2 * D, C});
  const auto& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < 2 * H; ++h)
      for (std::size_t w = 0; w < 2 * W; ++w)
        for (std::size_t d = 0; d < 2 * D; ++d)
          std::copy_n(xv.data() + xv.index5(b, h / 2, w / 2, d / 2, 0), C,
                      out.data() + out.index5(b, h, w, d, 0));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    Tensor<T> g(in.value.shape());
    const auto& gs = self.grad;
    const auto& s = gs.shape();
    for (std::size_t b = 0; b < s[0]; ++b)
      for (std::size_t h = 0; h < s[1]; ++h)
        for (std::size_t w = 0; w < s[2]; ++w)
          for (std::size_t d = 0; d < s[3]; ++d) {
            const T* src = gs.data() + gs.index5(b, h, w, d, 0);
            T* dst = g.data() + g.index5(b, h / 2, w / 2, d / 2, 0);
            for (std::size_t c = 0; c < s[4]; ++c) dst[c] += src[c];
          }
    in.accumulate(std::move(g));
  });
}

}  // namespace meal
