#pragma once

// The closed op set recorded on the autodiff tape: the model building blocks
// (linear, conv2d, layer_norm, attention, pixel_shuffle, activations) plus the
// elementwise / reduction / shape plumbing the losses need. Every op defines
// forward semantics and a hand-derived gradient; the gradcheck suite verifies
// each against central finite differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "vitsr/tensor.hpp"

namespace vitsr {

namespace detail {

template <typename T>
bool track(const Tensor<T>& a) {
  return grad_enabled() && a.needs_grad();
}
template <typename T>
bool track(const Tensor<T>& a, const Tensor<T>& b) {
  return grad_enabled() && (a.needs_grad() || b.needs_grad());
}
template <typename T>
bool track(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  return grad_enabled() && (a.needs_grad() || b.needs_grad() || c.needs_grad());
}

template <typename T>
void wire(Tensor<T>& out, std::vector<std::shared_ptr<TensorNode<T>>> parents,
          std::function<void()> backprop) {
  out.node()->parents = std::move(parents);
  out.node()->needs_grad = true;
  out.node()->backprop = std::move(backprop);
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

// add supports b broadcast over leading dims of a (b.shape a suffix of
// a.shape); that is the only broadcast the model needs.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape()))
    throw DimensionError("add: shape " + shape_str(b.shape()) + " is not a suffix of " +
                         shape_str(a.shape()));
  const std::size_t nb = b.numel(), na = a.numel();
  std::vector<T> y(na);
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t off = 0; off < na; off += nb)
    for (std::size_t i = 0; i < nb; ++i) y[off + i] = pa[off + i] + pb[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::track(a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    detail::wire(out, {an, bn}, [on, an, bn, na, nb]() {
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < na; ++i) an->grad[i] += g[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t off = 0; off < na; off += nb)
          for (std::size_t i = 0; i < nb; ++i) bn->grad[i] += g[off + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (!same_shape(a.shape(), b.shape()))
    throw DimensionError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::size_t n = a.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a.data()[i] - b.data()[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::track(a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    detail::wire(out, {an, bn}, [on, an, bn, n]() {
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!same_shape(a.shape(), b.shape()))
    throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::size_t n = a.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a.data()[i] * b.data()[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::track(a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    detail::wire(out, {an, bn}, [on, an, bn, n]() {
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->value[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  if (!same_shape(a.shape(), b.shape()))
    throw DimensionError("div: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::size_t n = a.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a.data()[i] / b.data()[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::track(a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    detail::wire(out, {an, bn}, [on, an, bn, n]() {
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] / bn->value[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T inv = T(1) / bn->value[i];
          bn->grad[i] -= g[i] * an->value[i] * inv * inv;
        }
      }
    });
  }
  return out;
}

// y = scale * x + shift, elementwise with scalar coefficients.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  std::size_t n = x.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = scale * x.data()[i] + shift;
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, scale, n]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += scale * on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  std::size_t n = x.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::abs(x.data()[i]);
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, n]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        T v = xn->value[i];
        // subgradient 0 at v == 0
        xn->grad[i] += on->grad[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation for precision)

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.data()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn]() {
      xn->ensure_grad();
      T g = on->grad[0];
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  std::size_t n = x.numel();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x.data()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, n]() {
      xn->ensure_grad();
      T g = on->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
  Tensor<T> out(std::move(shape), x.values());
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
  return st;
}

// out[idx] = in[perm applied]; returns the flat source index for each flat
// destination index, shared by permute forward and backward.
template <typename Fn>
void for_each_permuted(const Shape& out_shape, const std::vector<std::size_t>& in_strides,
                       const std::vector<int>& perm, Fn&& fn) {
  const std::size_t n = shape_numel(out_shape);
  const std::size_t nd = out_shape.size();
  std::vector<int> idx(nd, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < nd; ++d)
      src += static_cast<std::size_t>(idx[d]) * in_strides[static_cast<std::size_t>(perm[d])];
    fn(flat, src);
    for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < out_shape[static_cast<std::size_t>(d)]) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != x.ndim())
    throw DimensionError("permute: rank mismatch");
  Shape out_shape(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d)
    out_shape[d] = x.dim(perm[d]);
  auto strides = detail::row_major_strides(x.shape());
  std::vector<T> y(x.numel());
  const T* px = x.data();
  detail::for_each_permuted(out_shape, strides, perm,
                            [&](std::size_t dst, std::size_t src) { y[dst] = px[src]; });
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, out_shape, strides, perm]() {
      xn->ensure_grad();
      detail::for_each_permuted(out_shape, strides, perm, [&](std::size_t dst, std::size_t src) {
        xn->grad[src] += on->grad[dst];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  std::vector<int> perm(static_cast<std::size_t>(x.ndim()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: empty input list");
  const int nd = xs[0].ndim();
  if (axis < 0 || axis >= nd) throw DimensionError("concat: bad axis");
  Shape out_shape = xs[0].shape();
  int axis_total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && x.dim(d) != out_shape[static_cast<std::size_t>(d)])
        throw DimensionError("concat: shape mismatch off-axis");
    axis_total += x.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);
  for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);

  std::vector<T> y(shape_numel(out_shape));
  const std::size_t out_row = static_cast<std::size_t>(axis_total) * inner;
  std::size_t col_off = 0;
  for (const auto& x : xs) {
    const std::size_t x_row = static_cast<std::size_t>(x.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * x_row, x_row, y.data() + o * out_row + col_off);
    col_off += x_row;
  }
  Tensor<T> out(out_shape, std::move(y));

  bool any = false;
  for (const auto& x : xs) any = any || x.needs_grad();
  if (grad_enabled() && any) {
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    auto* on = out.node().get();
    detail::wire(out, parents, [on, parents, outer, inner, out_row, axis]() {
      std::size_t col_off2 = 0;
      for (const auto& pn : parents) {
        const std::size_t p_axis = pn->shape[static_cast<std::size_t>(axis)];
        const std::size_t p_row = p_axis * inner;
        if (pn->needs_grad) {
          pn->ensure_grad();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < p_row; ++i)
              pn->grad[o * p_row + i] += on->grad[o * out_row + col_off2 + i];
        }
        col_off2 += p_row;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, int start, int len) {
  const int D = x.dim(x.ndim() - 1);
  if (start < 0 || len <= 0 || start + len > D) throw DimensionError("slice_lastdim: bad range");
  Shape out_shape = x.shape();
  out_shape.back() = len;
  const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
  std::vector<T> y(rows * static_cast<std::size_t>(len));
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * static_cast<std::size_t>(D) + static_cast<std::size_t>(start),
                static_cast<std::size_t>(len), y.data() + r * static_cast<std::size_t>(len));
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, rows, D, start, len]() {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (int i = 0; i < len; ++i)
          xn->grad[r * static_cast<std::size_t>(D) + static_cast<std::size_t>(start + i)] +=
              on->grad[r * static_cast<std::size_t>(len) + static_cast<std::size_t>(i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

// y = x . w^T + b with x [..., in], w [out, in], b [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() < 1 || w.ndim() != 2 || b.ndim() != 1)
    throw DimensionError("linear: expected x [..,in], w [out,in], b [out]");
  const int in = x.dim(x.ndim() - 1);
  const int out_dim = w.dim(0);
  if (w.dim(1) != in)
    throw DimensionError("linear: x last dim " + std::to_string(in) + " vs w in dim " +
                         std::to_string(w.dim(1)));
  if (b.dim(0) != out_dim) throw DimensionError("linear: bias dim mismatch");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(in);

  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<T> y(rows * static_cast<std::size_t>(out_dim));
  const T* px = x.data();
  const T* pw = w.data();
  const T* pb = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * static_cast<std::size_t>(in);
    T* yr = y.data() + r * static_cast<std::size_t>(out_dim);
    for (int o = 0; o < out_dim; ++o)
      yr[o] = detail::dot(xr, pw + static_cast<std::size_t>(o) * static_cast<std::size_t>(in),
                          static_cast<std::size_t>(in)) +
              pb[o];
  }
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(x, w, b)) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto* on = out.node().get();
    detail::wire(out, {xn, wn, bn}, [on, xn, wn, bn, rows, in, out_dim]() {
      const auto& g = on->grad;
      const std::size_t szin = static_cast<std::size_t>(in);
      const std::size_t szout = static_cast<std::size_t>(out_dim);
      if (xn->needs_grad) {
        xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * szout;
          T* dxr = xn->grad.data() + r * szin;
          for (int o = 0; o < out_dim; ++o)
            detail::axpy(gr[o], wn->value.data() + static_cast<std::size_t>(o) * szin, dxr, szin);
        }
      }
      if (wn->needs_grad) {
        wn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * szout;
          const T* xr = xn->value.data() + r * szin;
          for (int o = 0; o < out_dim; ++o)
            detail::axpy(gr[o], xr, wn->grad.data() + static_cast<std::size_t>(o) * szin, szin);
        }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * szout;
          for (int o = 0; o < out_dim; ++o) bn->grad[static_cast<std::size_t>(o)] += gr[o];
        }
      }
    });
  }
  return out;
}

// Batched matmul: a [L.., M, K] x b [L.., K, N] -> [L.., M, N], identical
// leading dims.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() != a.ndim()) throw DimensionError("bmm: rank mismatch");
  const int nd = a.ndim();
  for (int d = 0; d < nd - 2; ++d)
    if (a.dim(d) != b.dim(d)) throw DimensionError("bmm: leading dims differ");
  const int M = a.dim(nd - 2), K = a.dim(nd - 1), N = b.dim(nd - 1);
  if (b.dim(nd - 2) != K) throw DimensionError("bmm: inner dims differ");
  std::size_t batches = 1;
  for (int d = 0; d < nd - 2; ++d) batches *= static_cast<std::size_t>(a.dim(d));

  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(nd - 1)] = N;
  const std::size_t sa = static_cast<std::size_t>(M) * static_cast<std::size_t>(K);
  const std::size_t sb = static_cast<std::size_t>(K) * static_cast<std::size_t>(N);
  const std::size_t sc = static_cast<std::size_t>(M) * static_cast<std::size_t>(N);
  std::vector<T> y(batches * sc, T(0));
  for (std::size_t t = 0; t < batches; ++t) {
    const T* pa = a.data() + t * sa;
    const T* pb = b.data() + t * sb;
    T* pc = y.data() + t * sc;
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k)
        detail::axpy(pa[m * K + k], pb + static_cast<std::size_t>(k) * static_cast<std::size_t>(N),
                     pc + static_cast<std::size_t>(m) * static_cast<std::size_t>(N),
                     static_cast<std::size_t>(N));
  }
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    detail::wire(out, {an, bn}, [on, an, bn, batches, M, K, N, sa, sb, sc]() {
      const auto& g = on->grad;
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t t = 0; t < batches; ++t) {
          const T* gg = g.data() + t * sc;
          const T* pb = bn->value.data() + t * sb;
          T* da = an->grad.data() + t * sa;
          for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k)
              da[m * K + k] += detail::dot(gg + static_cast<std::size_t>(m) * static_cast<std::size_t>(N),
                                           pb + static_cast<std::size_t>(k) * static_cast<std::size_t>(N),
                                           static_cast<std::size_t>(N));
        }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t t = 0; t < batches; ++t) {
          const T* gg = g.data() + t * sc;
          const T* pa = an->value.data() + t * sa;
          T* db = bn->grad.data() + t * sb;
          for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k)
              detail::axpy(pa[m * K + k], gg + static_cast<std::size_t>(m) * static_cast<std::size_t>(N),
                           db + static_cast<std::size_t>(k) * static_cast<std::size_t>(N),
                           static_cast<std::size_t>(N));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and nonlinearities

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const int D = x.dim(x.ndim() - 1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
  std::vector<T> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * static_cast<std::size_t>(D);
    T* yr = y.data() + r * static_cast<std::size_t>(D);
    T mx = xr[0];
    for (int i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
    double denom = 0;
    for (int i = 0; i < D; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      denom += static_cast<double>(yr[i]);
    }
    const T inv = static_cast<T>(1.0 / denom);
    for (int i = 0; i < D; ++i) yr[i] *= inv;
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, rows, D]() {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = on->value.data() + r * static_cast<std::size_t>(D);
        const T* gr = on->grad.data() + r * static_cast<std::size_t>(D);
        T* dx = xn->grad.data() + r * static_cast<std::size_t>(D);
        double dotgy = 0;
        for (int i = 0; i < D; ++i) dotgy += static_cast<double>(gr[i]) * static_cast<double>(yr[i]);
        const T s = static_cast<T>(dotgy);
        for (int i = 0; i < D; ++i) dx[i] += yr[i] * (gr[i] - s);
      }
    });
  }
  return out;
}

// Per-token normalization over the last dim, biased variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int D = x.dim(x.ndim() - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != D || beta.ndim() != 1 || beta.dim(0) != D)
    throw DimensionError("layer_norm: gamma/beta must be [D]");
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
  std::vector<T> y(x.numel());
  std::vector<T> mu(rows), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * static_cast<std::size_t>(D);
    double m = 0;
    for (int i = 0; i < D; ++i) m += static_cast<double>(xr[i]);
    m /= D;
    double var = 0;
    for (int i = 0; i < D; ++i) {
      double d = static_cast<double>(xr[i]) - m;
      var += d * d;
    }
    var /= D;
    const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    mu[r] = static_cast<T>(m);
    inv_std[r] = istd;
    T* yr = y.data() + r * static_cast<std::size_t>(D);
    for (int i = 0; i < D; ++i)
      yr[i] = (xr[i] - mu[r]) * istd * gamma.data()[i] + beta.data()[i];
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x, gamma, beta)) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto* on = out.node().get();
    detail::wire(out, {xn, gn, bn},
                 [on, xn, gn, bn, rows, D, mu = std::move(mu), inv_std = std::move(inv_std)]() {
      const auto& g = on->grad;
      std::vector<T> xhat(static_cast<std::size_t>(D));
      if (xn->needs_grad) xn->ensure_grad();
      if (gn->needs_grad) gn->ensure_grad();
      if (bn->needs_grad) bn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xn->value.data() + r * static_cast<std::size_t>(D);
        const T* gr = g.data() + r * static_cast<std::size_t>(D);
        for (int i = 0; i < D; ++i) xhat[static_cast<std::size_t>(i)] = (xr[i] - mu[r]) * inv_std[r];
        if (gn->needs_grad)
          for (int i = 0; i < D; ++i) gn->grad[static_cast<std::size_t>(i)] += gr[i] * xhat[static_cast<std::size_t>(i)];
        if (bn->needs_grad)
          for (int i = 0; i < D; ++i) bn->grad[static_cast<std::size_t>(i)] += gr[i];
        if (xn->needs_grad) {
          double m1 = 0, m2 = 0;
          for (int i = 0; i < D; ++i) {
            double gg = static_cast<double>(gr[i]) * static_cast<double>(gn->value[static_cast<std::size_t>(i)]);
            m1 += gg;
            m2 += gg * static_cast<double>(xhat[static_cast<std::size_t>(i)]);
          }
          m1 /= D;
          m2 /= D;
          T* dx = xn->grad.data() + r * static_cast<std::size_t>(D);
          for (int i = 0; i < D; ++i) {
            double gg = static_cast<double>(gr[i]) * static_cast<double>(gn->value[static_cast<std::size_t>(i)]);
            dx[i] += static_cast<T>((gg - m1 - static_cast<double>(xhat[static_cast<std::size_t>(i)]) * m2) *
                                    static_cast<double>(inv_std[r]));
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  std::vector<T> y(n);
  const double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < n; ++i) {
    double v = static_cast<double>(x.data()[i]);
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, n]() {
      xn->ensure_grad();
      const double inv_sqrt2 = 0.7071067811865475244;
      const double inv_sqrt2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < n; ++i) {
        double v = static_cast<double>(xn->value[i]);
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        xn->grad[i] += on->grad[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  if (!(slope > T(0) && slope < T(1))) throw ContractError("leaky_relu: slope must be in (0,1)");
  const std::size_t n = x.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v = x.data()[i];
    y[i] = v >= T(0) ? v : slope * v;
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, slope, n]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        xn->grad[i] += on->grad[i] * (xn->value[i] >= T(0) ? T(1) : slope);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvDims {
  int B, C, H, W;
  bool batched;
};

inline ConvDims conv_input_dims(const Shape& s) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  throw DimensionError("conv2d: input must be [C,H,W] or [B,C,H,W]");
}

}  // namespace detail

// Standard cross-correlation, stride 1, zero padding. x [B?,Cin,H,W],
// w [Cout,Cin,k,k] with k odd, b [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding) {
  auto dims = detail::conv_input_dims(x.shape());
  if (w.ndim() != 4) throw DimensionError("conv2d: weight must be [Cout,Cin,k,k]");
  const int Co = w.dim(0), Ci = w.dim(1), k = w.dim(2);
  if (w.dim(3) != k || k % 2 == 0) throw DimensionError("conv2d: kernel must be square with odd size");
  if (Ci != dims.C)
    throw DimensionError("conv2d: input channels " + std::to_string(dims.C) + " vs weight " +
                         std::to_string(Ci));
  if (b.ndim() != 1 || b.dim(0) != Co) throw DimensionError("conv2d: bias must be [Cout]");
  if (padding < 0) throw ContractError("conv2d: negative padding");
  const int H = dims.H, W = dims.W;
  const int Ho = H + 2 * padding - k + 1;
  const int Wo = W + 2 * padding - k + 1;
  if (Ho <= 0 || Wo <= 0) throw DimensionError("conv2d: kernel larger than padded input");

  Shape out_shape = dims.batched ? Shape{dims.B, Co, Ho, Wo} : Shape{Co, Ho, Wo};
  std::vector<T> y(shape_numel(out_shape));
  const std::size_t x_img = static_cast<std::size_t>(dims.C) * H * W;
  const std::size_t y_img = static_cast<std::size_t>(Co) * Ho * Wo;
  const T* pw = w.data();

  for (int bb = 0; bb < dims.B; ++bb) {
    const T* px = x.data() + static_cast<std::size_t>(bb) * x_img;
    T* py = y.data() + static_cast<std::size_t>(bb) * y_img;
    for (int co = 0; co < Co; ++co) {
      T* plane = py + static_cast<std::size_t>(co) * Ho * Wo;
      std::fill_n(plane, static_cast<std::size_t>(Ho) * Wo, b.data()[co]);
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xin = px + static_cast<std::size_t>(ci) * H * W;
        for (int u = 0; u < k; ++u) {
          const int i_lo = std::max(0, padding - u);
          const int i_hi = std::min(Ho, H + padding - u);
          for (int v = 0; v < k; ++v) {
            const T ws = pw[((static_cast<std::size_t>(co) * Ci + ci) * k + u) * k + v];
            const int j_lo = std::max(0, padding - v);
            const int j_hi = std::min(Wo, W + padding - v);
            if (j_hi <= j_lo) continue;
            for (int i = i_lo; i < i_hi; ++i) {
              const T* src = xin + static_cast<std::size_t>(i + u - padding) * W + (j_lo + v - padding);
              T* dst = plane + static_cast<std::size_t>(i) * Wo + j_lo;
              detail::axpy(ws, src, dst, static_cast<std::size_t>(j_hi - j_lo));
            }
          }
        }
      }
    }
  }
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(x, w, b)) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto* on = out.node().get();
    const int B = dims.B, C = dims.C;
    detail::wire(out, {xn, wn, bn}, [on, xn, wn, bn, B, C, H, W, Co, Ci, k, padding, Ho, Wo,
                                     x_img, y_img]() {
      const auto& g = on->grad;
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (int bb = 0; bb < B; ++bb)
          for (int co = 0; co < Co; ++co) {
            const T* gp = g.data() + static_cast<std::size_t>(bb) * y_img +
                          static_cast<std::size_t>(co) * Ho * Wo;
            double acc = 0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i)
              acc += static_cast<double>(gp[i]);
            bn->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
          }
      }
      if (wn->needs_grad) {
        wn->ensure_grad();
        for (int bb = 0; bb < B; ++bb) {
          const T* px = xn->value.data() + static_cast<std::size_t>(bb) * x_img;
          const T* py = g.data() + static_cast<std::size_t>(bb) * y_img;
          for (int co = 0; co < Co; ++co) {
            const T* gp = py + static_cast<std::size_t>(co) * Ho * Wo;
            for (int ci = 0; ci < Ci; ++ci) {
              const T* xin = px + static_cast<std::size_t>(ci) * H * W;
              for (int u = 0; u < k; ++u) {
                const int i_lo = std::max(0, padding - u);
                const int i_hi = std::min(Ho, H + padding - u);
                for (int v = 0; v < k; ++v) {
                  const int j_lo = std::max(0, padding - v);
                  const int j_hi = std::min(Wo, W + padding - v);
                  if (j_hi <= j_lo) continue;
                  double acc = 0;
                  for (int i = i_lo; i < i_hi; ++i)
                    acc += static_cast<double>(detail::dot(
                        gp + static_cast<std::size_t>(i) * Wo + j_lo,
                        xin + static_cast<std::size_t>(i + u - padding) * W + (j_lo + v - padding),
                        static_cast<std::size_t>(j_hi - j_lo)));
                  wn->grad[((static_cast<std::size_t>(co) * Ci + ci) * k + u) * k + v] +=
                      static_cast<T>(acc);
                }
              }
            }
          }
        }
      }
      if (xn->needs_grad) {
        xn->ensure_grad();
        const T* pw = wn->value.data();
        for (int bb = 0; bb < B; ++bb) {
          T* dx = xn->grad.data() + static_cast<std::size_t>(bb) * x_img;
          const T* py = g.data() + static_cast<std::size_t>(bb) * y_img;
          for (int co = 0; co < Co; ++co) {
            const T* gp = py + static_cast<std::size_t>(co) * Ho * Wo;
            for (int ci = 0; ci < Ci; ++ci) {
              T* dxin = dx + static_cast<std::size_t>(ci) * H * W;
              for (int u = 0; u < k; ++u) {
                const int i_lo = std::max(0, padding - u);
                const int i_hi = std::min(Ho, H + padding - u);
                for (int v = 0; v < k; ++v) {
                  const T ws = pw[((static_cast<std::size_t>(co) * Ci + ci) * k + u) * k + v];
                  const int j_lo = std::max(0, padding - v);
                  const int j_hi = std::min(Wo, W + padding - v);
                  if (j_hi <= j_lo) continue;
                  for (int i = i_lo; i < i_hi; ++i)
                    detail::axpy(ws, gp + static_cast<std::size_t>(i) * Wo + j_lo,
                                 dxin + static_cast<std::size_t>(i + u - padding) * W +
                                     (j_lo + v - padding),
                                 static_cast<std::size_t>(j_hi - j_lo));
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// PixelShuffle

namespace detail {

// out[b, c, r*h+i, r*w+j] = in[b, c*r*r + i*r + j, h, w]
template <typename T>
void shuffle_copy(const T* in, T* out, int B, int C, int H, int W, int r, bool inverse) {
  const int Cr2 = C * r * r;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int h = 0; h < H; ++h) {
            const std::size_t src_row =
                ((static_cast<std::size_t>(b) * Cr2 + (c * r * r + i * r + j)) * H + h) * W;
            const std::size_t dst_row =
                ((static_cast<std::size_t>(b) * C + c) * (static_cast<std::size_t>(H) * r) +
                 (static_cast<std::size_t>(h) * r + i)) *
                    (static_cast<std::size_t>(W) * r) +
                j;
            if (!inverse)
              for (int w0 = 0; w0 < W; ++w0) out[dst_row + static_cast<std::size_t>(w0) * r] = in[src_row + w0];
            else
              for (int w0 = 0; w0 < W; ++w0) out[src_row + w0] = in[dst_row + static_cast<std::size_t>(w0) * r];
          }
}

}  // namespace detail

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (r < 1) throw ContractError("pixel_shuffle: r must be >= 1");
  auto dims = detail::conv_input_dims(x.shape());
  if (dims.C % (r * r) != 0)
    throw DimensionError("pixel_shuffle: channels " + std::to_string(dims.C) +
                         " not divisible by r^2=" + std::to_string(r * r));
  const int C = dims.C / (r * r);
  Shape out_shape = dims.batched ? Shape{dims.B, C, dims.H * r, dims.W * r}
                                 : Shape{C, dims.H * r, dims.W * r};
  std::vector<T> y(x.numel());
  detail::shuffle_copy(x.data(), y.data(), dims.B, C, dims.H, dims.W, r, false);
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    const int B = dims.B, H = dims.H, W = dims.W;
    detail::wire(out, {xn}, [on, xn, B, C, H, W, r]() {
      xn->ensure_grad();
      std::vector<T> tmp(on->grad.size());
      detail::shuffle_copy(on->grad.data(), tmp.data(), B, C, H, W, r, true);
      for (std::size_t i = 0; i < tmp.size(); ++i) xn->grad[i] += tmp[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  if (r < 1) throw ContractError("pixel_unshuffle: r must be >= 1");
  auto dims = detail::conv_input_dims(x.shape());
  if (dims.H % r != 0 || dims.W % r != 0)
    throw DimensionError("pixel_unshuffle: spatial dims not divisible by r");
  const int H = dims.H / r, W = dims.W / r;
  Shape out_shape = dims.batched ? Shape{dims.B, dims.C * r * r, H, W}
                                 : Shape{dims.C * r * r, H, W};
  std::vector<T> y(x.numel());
  detail::shuffle_copy(x.data(), y.data(), dims.B, dims.C, H, W, r, true);
  Tensor<T> out(out_shape, std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    const int B = dims.B, C = dims.C;
    detail::wire(out, {xn}, [on, xn, B, C, H, W, r]() {
      xn->ensure_grad();
      std::vector<T> tmp(on->grad.size());
      detail::shuffle_copy(on->grad.data(), tmp.data(), B, C, H, W, r, false);
      for (std::size_t i = 0; i < tmp.size(); ++i) xn->grad[i] += tmp[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-kernel separable blur with replicate padding (SSIM windows). The taps
// are constants, so the gradient only flows to x.

namespace detail {

// Horizontal then vertical 1-d passes; adjoint scatters with the same
// clamped indexing in reverse order.
template <typename T>
void blur_pass(const T* in, T* out, int len, int stride, int count, int count_stride,
               const std::vector<T>& taps, bool adjoint) {
  const int R = static_cast<int>(taps.size()) / 2;
  for (int c = 0; c < count; ++c) {
    const T* src = in + static_cast<std::size_t>(c) * count_stride;
    T* dst = out + static_cast<std::size_t>(c) * count_stride;
    for (int i = 0; i < len; ++i) {
      if (!adjoint) {
        double acc = 0;
        for (int m = 0; m < static_cast<int>(taps.size()); ++m) {
          int idx = std::clamp(i + m - R, 0, len - 1);
          acc += static_cast<double>(taps[static_cast<std::size_t>(m)]) *
                 static_cast<double>(src[static_cast<std::size_t>(idx) * stride]);
        }
        dst[static_cast<std::size_t>(i) * stride] = static_cast<T>(acc);
      } else {
        const T g = src[static_cast<std::size_t>(i) * stride];
        for (int m = 0; m < static_cast<int>(taps.size()); ++m) {
          int idx = std::clamp(i + m - R, 0, len - 1);
          dst[static_cast<std::size_t>(idx) * stride] += taps[static_cast<std::size_t>(m)] * g;
        }
      }
    }
  }
}

template <typename T>
void blur2d_forward(const T* in, T* out, int planes, int H, int W, const std::vector<T>& taps) {
  std::vector<T> tmp(static_cast<std::size_t>(H) * W);
  for (int p = 0; p < planes; ++p) {
    const T* src = in + static_cast<std::size_t>(p) * H * W;
    T* dst = out + static_cast<std::size_t>(p) * H * W;
    // horizontal: rows are contiguous
    blur_pass(src, tmp.data(), W, 1, H, W, taps, false);
    // vertical: columns stride W
    for (int j = 0; j < W; ++j)
      blur_pass(tmp.data() + j, dst + j, H, W, 1, 0, taps, false);
  }
}

template <typename T>
void blur2d_adjoint(const T* gin, T* gout, int planes, int H, int W, const std::vector<T>& taps) {
  std::vector<T> tmp(static_cast<std::size_t>(H) * W);
  for (int p = 0; p < planes; ++p) {
    const T* src = gin + static_cast<std::size_t>(p) * H * W;
    T* dst = gout + static_cast<std::size_t>(p) * H * W;
    std::fill(tmp.begin(), tmp.end(), T(0));
    // adjoint of vertical pass
    for (int j = 0; j < W; ++j)
      blur_pass(src + j, tmp.data() + j, H, W, 1, 0, taps, true);
    // adjoint of horizontal pass, accumulated into gout
    blur_pass(tmp.data(), dst, W, 1, H, W, taps, true);
  }
}

}  // namespace detail

template <typename T>
Tensor<T> gaussian_blur2d(const Tensor<T>& x, const std::vector<T>& taps) {
  if (x.ndim() < 2) throw DimensionError("gaussian_blur2d: need at least 2 dims");
  if (taps.empty() || taps.size() % 2 == 0)
    throw ContractError("gaussian_blur2d: taps must have odd length");
  const int W = x.dim(x.ndim() - 1);
  const int H = x.dim(x.ndim() - 2);
  const int planes = static_cast<int>(x.numel() / (static_cast<std::size_t>(H) * W));
  std::vector<T> y(x.numel());
  detail::blur2d_forward(x.data(), y.data(), planes, H, W, taps);
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, planes, H, W, taps]() {
      xn->ensure_grad();
      detail::blur2d_adjoint(on->grad.data(), xn->grad.data(), planes, H, W, taps);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch rearrangement: [B,C,S,S] -> [B, N, C*p*p] with N = (S/p)^2; features
// of one patch are laid out channel-major (c, u, v).

template <typename T>
Tensor<T> image_to_patches(const Tensor<T>& x, int p) {
  if (x.ndim() != 4) throw DimensionError("image_to_patches: input must be [B,C,S,S]");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H != W || H % p != 0) throw DimensionError("image_to_patches: size not divisible by patch");
  const int g = H / p;
  const int N = g * g;
  const int P = C * p * p;
  std::vector<T> y(static_cast<std::size_t>(B) * N * P);
  const T* px = x.data();
  for (int b = 0; b < B; ++b)
    for (int gh = 0; gh < g; ++gh)
      for (int gw = 0; gw < g; ++gw) {
        T* dst = y.data() + ((static_cast<std::size_t>(b) * N) + (static_cast<std::size_t>(gh) * g + gw)) * P;
        for (int c = 0; c < C; ++c)
          for (int u = 0; u < p; ++u) {
            const T* src = px + ((static_cast<std::size_t>(b) * C + c) * H +
                                 (static_cast<std::size_t>(gh) * p + u)) *
                                    W +
                           static_cast<std::size_t>(gw) * p;
            std::copy_n(src, p, dst + (static_cast<std::size_t>(c) * p + u) * p);
          }
      }
  Tensor<T> out({B, N, P}, std::move(y));
  if (detail::track(x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    detail::wire(out, {xn}, [on, xn, B, C, H, W, p, g, N, P]() {
      xn->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int gh = 0; gh < g; ++gh)
          for (int gw = 0; gw < g; ++gw) {
            const T* src = on->grad.data() +
                           ((static_cast<std::size_t>(b) * N) + (static_cast<std::size_t>(gh) * g + gw)) * P;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < p; ++u) {
                T* dst = xn->grad.data() + ((static_cast<std::size_t>(b) * C + c) * H +
                                            (static_cast<std::size_t>(gh) * p + u)) *
                                               W +
                         static_cast<std::size_t>(gw) * p;
                const T* s = src + (static_cast<std::size_t>(c) * p + u) * p;
                for (int v = 0; v < p; ++v) dst[v] += s[v];
              }
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention with a fused QKV projection.

template <typename T>
struct AttentionProbe {
  Tensor<T> weights;  // [B, heads, N, N], detached
};

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const Tensor<T>& qkv_w, const Tensor<T>& qkv_b,
                               const Tensor<T>& proj_w, const Tensor<T>& proj_b, int heads,
                               AttentionProbe<T>* probe = nullptr) {
  const bool batched = x.ndim() == 3;
  if (!batched && x.ndim() != 2) throw DimensionError("attention: input must be [N,D] or [B,N,D]");
  Tensor<T> xin = batched ? x : reshape(x, {1, x.dim(0), x.dim(1)});
  const int B = xin.dim(0), N = xin.dim(1), D = xin.dim(2);
  if (D % heads != 0)
    throw ConfigError("attention: embed dim " + std::to_string(D) + " not divisible by heads " +
                      std::to_string(heads));
  const int dh = D / heads;

  Tensor<T> qkv = linear(xin, qkv_w, qkv_b);  // [B,N,3D]
  auto split_heads = [&](const Tensor<T>& t) {
    return permute(reshape(t, {B, N, heads, dh}), {0, 2, 1, 3});  // [B,h,N,dh]
  };
  Tensor<T> q = split_heads(slice_lastdim(qkv, 0, D));
  Tensor<T> k = split_heads(slice_lastdim(qkv, D, D));
  Tensor<T> v = split_heads(slice_lastdim(qkv, 2 * D, D));

  Tensor<T> scores = affine(bmm(q, transpose_last2(k)),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))), T(0));
  Tensor<T> attn = softmax_lastdim(scores);  // [B,h,N,N]
  if (probe) probe->weights = attn.detach();
  Tensor<T> ctx = reshape(permute(bmm(attn, v), {0, 2, 1, 3}), {B, N, D});
  Tensor<T> out = linear(ctx, proj_w, proj_b);
  return batched ? out : reshape(out, {N, D});
}

// ---------------------------------------------------------------------------
// Operator sugar

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return affine(a, s, T(0)); }
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return affine(a, T(1), s); }
template <typename T>
Tensor<T> operator-(T s, const Tensor<T>& a) { return affine(a, T(-1), s); }

}  // namespace vitsr
