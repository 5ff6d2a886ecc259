#pragma once

// Differentiable tensor operations recorded on a Tape.
//
// Every op checks its shape preconditions eagerly and throws ShapeError naming
// the offending shapes. Backward closures capture whatever forward state they
// need by value, so the tape stays the single owner of intermediate data.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bcd/autodiff.hpp"
#include "bcd/tensor.hpp"

namespace bcd {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// cols is (C*kh*kw) x (ho*wo) for one batch item.
template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t p = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols + ((ci * kh + i) * kw + j) * p;
        const T* plane = x + ci * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t y = std::ptrdiff_t(oy * stride + i) - std::ptrdiff_t(pad);
          T* out = row + oy * wo;
          if (y < 0 || y >= std::ptrdiff_t(h)) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = plane + std::size_t(y) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t xx = std::ptrdiff_t(ox * stride + j) - std::ptrdiff_t(pad);
            out[ox] = (xx < 0 || xx >= std::ptrdiff_t(w)) ? T(0) : src[xx];
          }
        }
      }
}

template <class T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  const std::size_t p = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = cols + ((ci * kh + i) * kw + j) * p;
        T* plane = x + ci * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t y = std::ptrdiff_t(oy * stride + i) - std::ptrdiff_t(pad);
          if (y < 0 || y >= std::ptrdiff_t(h)) continue;
          T* dst = plane + std::size_t(y) * w;
          const T* in = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t xx = std::ptrdiff_t(ox * stride + j) - std::ptrdiff_t(pad);
            if (xx >= 0 && xx < std::ptrdiff_t(w)) dst[xx] += in[ox];
          }
        }
      }
}

template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D dfdx) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const std::size_t xid = x.id();
  Tensor<T> ycopy = x.requires_grad() ? y : Tensor<T>{};
  return x.tape().record(std::move(y), x.requires_grad(),
                         [xid, ycopy = std::move(ycopy), dfdx](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& xv = t.node(xid).value;
                           Tensor<T>& gx = t.grad_buffer(xid);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], ycopy[i]);
                         });
}

template <class T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(what) + ": operands on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution and resampling

/// 2-D cross-correlation. kernel is (out, in, kh, kw); bias (if valid) has `out` elements.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (ks.c != xs.c)
    throw ShapeError("conv2d: kernel " + to_string(ks) + " does not match input " + to_string(xs));
  if (xs.h + 2 * pad < ks.h || xs.w + 2 * pad < ks.w)
    throw ShapeError("conv2d: kernel " + to_string(ks) + " does not fit padded input " + to_string(xs));
  if (bias.valid() && bias.shape().size() != ks.n)
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match kernel " + to_string(ks));

  const std::size_t ho = detail::conv_extent(xs.h, ks.h, stride, pad);
  const std::size_t wo = detail::conv_extent(xs.w, ks.w, stride, pad);
  const std::size_t kdim = ks.c * ks.h * ks.w, p = ho * wo;
  const bool pointwise = ks.h == 1 && ks.w == 1 && stride == 1 && pad == 0;

  Tensor<T> y(Shape{xs.n, ks.n, ho, wo});
  const Tensor<T>& xv = x.value();
  detail::CMapMat<T> wmat(kernel.value().data(), ks.n, kdim);
  const bool need_cols = kernel.requires_grad() && !pointwise;
  AlignedVector<T> all_cols(need_cols ? xs.n * kdim * p : 0);
  AlignedVector<T> cols(pointwise ? 0 : kdim * p);
  for (std::size_t b = 0; b < xs.n; ++b) {
    const T* xb = xv.data() + b * xs.c * xs.plane();
    const T* cptr = xb;
    if (!pointwise) {
      T* dst = need_cols ? all_cols.data() + b * kdim * p : cols.data();
      detail::im2col(xb, xs.c, xs.h, xs.w, ks.h, ks.w, stride, pad, ho, wo, dst);
      cptr = dst;
    }
    detail::MapMat<T> ymat(y.data() + b * ks.n * p, ks.n, p);
    ymat.noalias() = wmat * detail::CMapMat<T>(cptr, kdim, p);
    if (bias.valid()) {
      const Tensor<T>& bv = bias.value();
      for (std::size_t o = 0; o < ks.n; ++o) ymat.row(o).array() += bv[o];
    }
  }

  const bool rg = x.requires_grad() || kernel.requires_grad() || (bias.valid() && bias.requires_grad());
  const std::size_t xid = x.id(), kid = kernel.id();
  const std::ptrdiff_t bid = bias.valid() ? std::ptrdiff_t(bias.id()) : -1;
  return x.tape().record(
      std::move(y), rg,
      [=, all_cols = std::move(all_cols)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.node(xid).value;
        const Tensor<T>& kv = t.node(kid).value;
        detail::CMapMat<T> wmat(kv.data(), ks.n, kdim);
        if (bid >= 0 && t.requires_grad(std::size_t(bid))) {
          Tensor<T>& gb = t.grad_buffer(std::size_t(bid));
          for (std::size_t b = 0; b < xs.n; ++b)
            for (std::size_t o = 0; o < ks.n; ++o) {
              const T* gp = g.data() + (b * ks.n + o) * p;
              T s = 0;
              for (std::size_t i = 0; i < p; ++i) s += gp[i];
              gb[o] += s;
            }
        }
        if (t.requires_grad(kid)) {
          Tensor<T>& gk = t.grad_buffer(kid);
          detail::MapMat<T> gw(gk.data(), ks.n, kdim);
          for (std::size_t b = 0; b < xs.n; ++b) {
            const T* cptr = pointwise ? xv.data() + b * xs.c * xs.plane() : all_cols.data() + b * kdim * p;
            gw.noalias() += detail::CMapMat<T>(g.data() + b * ks.n * p, ks.n, p) *
                            detail::CMapMat<T>(cptr, kdim, p).transpose();
          }
        }
        if (t.requires_grad(xid)) {
          Tensor<T>& gx = t.grad_buffer(xid);
          detail::RowMat<T> dcols(kdim, p);
          for (std::size_t b = 0; b < xs.n; ++b) {
            detail::CMapMat<T> gy(g.data() + b * ks.n * p, ks.n, p);
            T* gxb = gx.data() + b * xs.c * xs.plane();
            if (pointwise) {
              detail::MapMat<T>(gxb, kdim, p).noalias() += wmat.transpose() * gy;
            } else {
              dcols.noalias() = wmat.transpose() * gy;
              detail::col2im(dcols.data(), xs.c, xs.h, xs.w, ks.h, ks.w, stride, pad, ho, wo, gxb);
            }
          }
        }
      });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride, std::size_t pad) {
  return conv2d(x, kernel, Var<T>{}, stride, pad);
}

namespace detail {
// Depth-to-space when `up`, space-to-depth otherwise; both use the same index map
//   out[b][c][h*r+i][w*r+j] == in[b][c*r*r + i*r + j][h][w].
template <class T>
void shuffle_copy(const Tensor<T>& packed_or_spread, Tensor<T>& dst, std::size_t r, bool up, bool add) {
  const Shape lo = up ? packed_or_spread.shape() : dst.shape();
  const std::size_t c_out = lo.c / (r * r);
  for (std::size_t b = 0; b < lo.n; ++b)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t y = 0; y < lo.h; ++y)
            for (std::size_t x = 0; x < lo.w; ++x) {
              const std::size_t pi = ((b * lo.c + c * r * r + i * r + j) * lo.h + y) * lo.w + x;
              const std::size_t si = ((b * c_out + c) * lo.h * r + y * r + i) * lo.w * r + x * r + j;
              const std::size_t from = up ? pi : si, to = up ? si : pi;
              if (add) dst[to] += packed_or_spread[from];
              else dst[to] = packed_or_spread[from];
            }
}
}  // namespace detail

/// Depth-to-space upsampling by `r`.
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
  const Shape s = x.shape();
  if (r == 0 || s.c % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channels of " + to_string(s) + " not divisible by r^2 = " +
                     std::to_string(r * r));
  Tensor<T> y(Shape{s.n, s.c / (r * r), s.h * r, s.w * r});
  detail::shuffle_copy(x.value(), y, r, true, false);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [xid, r](Tape<T>& t, const Tensor<T>& g) {
    detail::shuffle_copy(g, t.grad_buffer(xid), r, false, true);
  });
}

/// Exact inverse of pixel_shuffle.
template <class T>
Var<T> space_to_depth(const Var<T>& x, std::size_t r) {
  const Shape s = x.shape();
  if (r == 0 || s.h % r != 0 || s.w % r != 0)
    throw ShapeError("space_to_depth: spatial extent of " + to_string(s) + " not divisible by " +
                     std::to_string(r));
  Tensor<T> y(Shape{s.n, s.c * r * r, s.h / r, s.w / r});
  detail::shuffle_copy(x.value(), y, r, false, false);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [xid, r](Tape<T>& t, const Tensor<T>& g) {
    detail::shuffle_copy(g, t.grad_buffer(xid), r, true, true);
  });
}

// ---------------------------------------------------------------------------
// Pointwise

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T alpha) {
  return detail::unary(
      x, [alpha](T v) { return v >= T(0) ? v : alpha * v; },
      [alpha](T v, T) { return v >= T(0) ? T(1) : alpha; });
}

/// log(1 + e^x), evaluated without overflow.
template <class T>
T softplus_value(T v) {
  return v > T(20) ? v : std::log1p(std::exp(v));
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return softplus_value(v); }, [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> scale(const Var<T>& x, T a) {
  return detail::unary(
      x, [a](T v) { return a * v; }, [a](T, T) { return a; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T a) {
  return detail::unary(
      x, [a](T v) { return v + a; }, [](T, T) { return T(1); });
}

/// max(x, lo); gradient passes only where x > lo.
template <class T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  return detail::unary(
      x, [lo](T v) { return v > lo ? v : lo; }, [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

/// x^p for positive x.
template <class T>
Var<T> pow_scalar(const Var<T>& x, T p) {
  return detail::unary(
      x, [p](T v) { return std::pow(v, p); }, [p](T v, T y) { return v == T(0) ? T(0) : p * y / v; });
}

enum class BinaryKind { add, sub, mul, div };

template <class T>
Var<T> binary(BinaryKind kind, const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b, "binary");
  require_same_shape(a.shape(), b.shape(), "elementwise");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    switch (kind) {
      case BinaryKind::add: y[i] = av[i] + bv[i]; break;
      case BinaryKind::sub: y[i] = av[i] - bv[i]; break;
      case BinaryKind::mul: y[i] = av[i] * bv[i]; break;
      case BinaryKind::div: y[i] = av[i] / bv[i]; break;
    }
  }
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(y), a.requires_grad() || b.requires_grad(),
                         [kind, aid, bid](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& av = t.node(aid).value;
                           const Tensor<T>& bv = t.node(bid).value;
                           if (t.requires_grad(aid)) {
                             Tensor<T>& ga = t.grad_buffer(aid);
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               switch (kind) {
                                 case BinaryKind::add:
                                 case BinaryKind::sub: ga[i] += g[i]; break;
                                 case BinaryKind::mul: ga[i] += g[i] * bv[i]; break;
                                 case BinaryKind::div: ga[i] += g[i] / bv[i]; break;
                               }
                             }
                           }
                           if (t.requires_grad(bid)) {
                             Tensor<T>& gb = t.grad_buffer(bid);
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               switch (kind) {
                                 case BinaryKind::add: gb[i] += g[i]; break;
                                 case BinaryKind::sub: gb[i] -= g[i]; break;
                                 case BinaryKind::mul: gb[i] += g[i] * av[i]; break;
                                 case BinaryKind::div: gb[i] -= g[i] * av[i] / (bv[i] * bv[i]); break;
                               }
                             }
                           }
                         });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return binary(BinaryKind::add, a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return binary(BinaryKind::sub, a, b); }
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return binary(BinaryKind::mul, a, b); }
template <class T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return binary(BinaryKind::div, a, b); }

// ---------------------------------------------------------------------------
// Channel manipulation

/// Concatenates along the channel axis, first operand first.
template <class T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no operands");
  const Shape s0 = parts[0].shape();
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat_channels: " + to_string(s) + " incompatible with " + to_string(s0));
    total += s.c;
    rg = rg || p.requires_grad();
  }
  Tensor<T> y(Shape{s0.n, total, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  std::vector<std::size_t> ids, chans;
  for (std::size_t b = 0; b < s0.n; ++b) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.shape().c;
      const T* src = p.value().data() + b * c * plane;
      std::copy(src, src + c * plane, y.data() + (b * total + off) * plane);
      off += c;
    }
  }
  for (const auto& p : parts) {
    ids.push_back(p.id());
    chans.push_back(p.shape().c);
  }
  return parts[0].tape().record(std::move(y), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t b = 0; b < s0.n; ++b) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (t.requires_grad(ids[k])) {
          T* dst = t.grad_buffer(ids[k]).data() + b * chans[k] * plane;
          const T* src = g.data() + (b * total + off) * plane;
          for (std::size_t i = 0; i < chans[k] * plane; ++i) dst[i] += src[i];
        }
        off += chans[k];
      }
    }
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Var<T> parts[2] = {a, b};
  return concat_channels<T>(std::span<const Var<T>>(parts, 2));
}

/// Channels [begin, begin + count).
template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.c)
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + to_string(s));
  Tensor<T> y(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    const T* src = x.value().data() + (b * s.c + begin) * plane;
    std::copy(src, src + count * plane, y.data() + b * count * plane);
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(xid);
    for (std::size_t b = 0; b < s.n; ++b) {
      T* dst = gx.data() + (b * s.c + begin) * plane;
      const T* src = g.data() + b * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

/// Mean over spatial positions: (n,c,h,w) -> (n,c,1,1).
template <class T>
Var<T> spatial_mean(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  if (plane == 0) throw ShapeError("spatial_mean: empty spatial extent " + to_string(s));
  Tensor<T> y(Shape{s.n, s.c, 1, 1});
  for (std::size_t k = 0; k < s.n * s.c; ++k) {
    const T* p = x.value().data() + k * plane;
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    y[k] = acc / T(plane);
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(xid);
    for (std::size_t k = 0; k < s.n * s.c; ++k) {
      const T v = g[k] / T(plane);
      T* d = gx.data() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] += v;
    }
  });
}

/// Scales each (batch, channel) plane of x by factors (n,c,1,1).
template <class T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& factors) {
  detail::require_same_tape(x, factors, "channel_scale");
  const Shape s = x.shape();
  if (factors.shape() != Shape{s.n, s.c, 1, 1})
    throw ShapeError("channel_scale: factors " + to_string(factors.shape()) + " do not match " + to_string(s));
  const std::size_t plane = s.plane();
  Tensor<T> y(s);
  for (std::size_t k = 0; k < s.n * s.c; ++k) {
    const T f = factors.value()[k];
    for (std::size_t i = 0; i < plane; ++i) y[k * plane + i] = x.value()[k * plane + i] * f;
  }
  const std::size_t xid = x.id(), fid = factors.id();
  return x.tape().record(std::move(y), x.requires_grad() || factors.requires_grad(),
                         [=](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& xv = t.node(xid).value;
                           const Tensor<T>& fv = t.node(fid).value;
                           if (t.requires_grad(xid)) {
                             Tensor<T>& gx = t.grad_buffer(xid);
                             for (std::size_t k = 0; k < s.n * s.c; ++k)
                               for (std::size_t i = 0; i < plane; ++i) gx[k * plane + i] += g[k * plane + i] * fv[k];
                           }
                           if (t.requires_grad(fid)) {
                             Tensor<T>& gf = t.grad_buffer(fid);
                             for (std::size_t k = 0; k < s.n * s.c; ++k) {
                               T acc = 0;
                               for (std::size_t i = 0; i < plane; ++i) acc += g[k * plane + i] * xv[k * plane + i];
                               gf[k] += acc;
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Divisive normalization

/// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2) per position, or x_i * sqrt(...) when
/// `inverse`. beta has C elements, gamma C*C elements (row i holds gamma_i*).
template <class T>
Var<T> divisive_norm(const Var<T>& x, const Var<T>& beta, const Var<T>& gamma, bool inverse) {
  const Shape s = x.shape();
  const std::size_t c = s.c, p = s.plane();
  if (beta.shape().size() != c || gamma.shape().size() != c * c)
    throw ShapeError("gdn: parameters beta " + to_string(beta.shape()) + " / gamma " +
                     to_string(gamma.shape()) + " do not match input " + to_string(s));
  detail::CMapMat<T> gmat(gamma.value().data(), c, c);
  Tensor<T> y(s);
  Tensor<T> norm(s);
  detail::RowMat<T> sq(c, p);
  for (std::size_t b = 0; b < s.n; ++b) {
    detail::CMapMat<T> xb(x.value().data() + b * c * p, c, p);
    sq = xb.array().square().matrix();
    detail::MapMat<T> nb(norm.data() + b * c * p, c, p);
    nb.noalias() = gmat * sq;
    for (std::size_t i = 0; i < c; ++i) nb.row(i).array() += beta.value()[i];
    detail::MapMat<T> yb(y.data() + b * c * p, c, p);
    if (inverse) yb = xb.array() * nb.array().sqrt();
    else yb = xb.array() / nb.array().sqrt();
  }
  const bool rg = x.requires_grad() || beta.requires_grad() || gamma.requires_grad();
  const std::size_t xid = x.id(), bid = beta.id(), gid = gamma.id();
  return x.tape().record(std::move(y), rg, [=, norm = std::move(norm)](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(xid).value;
    detail::CMapMat<T> gmat(t.node(gid).value.data(), c, c);
    detail::RowMat<T> dnorm(c, p), sq(c, p);
    for (std::size_t b = 0; b < s.n; ++b) {
      detail::CMapMat<T> xb(xv.data() + b * c * p, c, p);
      detail::CMapMat<T> nb(norm.data() + b * c * p, c, p);
      detail::CMapMat<T> gb(g.data() + b * c * p, c, p);
      if (inverse) dnorm = (gb.array() * xb.array() * T(0.5) / nb.array().sqrt()).matrix();
      else dnorm = (gb.array() * xb.array() * T(-0.5) / (nb.array() * nb.array().sqrt())).matrix();
      if (t.requires_grad(bid)) {
        Tensor<T>& gbeta = t.grad_buffer(bid);
        for (std::size_t i = 0; i < c; ++i) gbeta[i] += dnorm.row(i).sum();
      }
      if (t.requires_grad(gid)) {
        sq = xb.array().square().matrix();
        detail::MapMat<T>(t.grad_buffer(gid).data(), c, c).noalias() += dnorm * sq.transpose();
      }
      if (t.requires_grad(xid)) {
        detail::MapMat<T> gx(t.grad_buffer(xid).data() + b * c * p, c, p);
        if (inverse) gx.array() += gb.array() * nb.array().sqrt();
        else gx.array() += gb.array() / nb.array().sqrt();
        sq.noalias() = gmat.transpose() * dnorm;
        gx.array() += T(2) * xb.array() * sq.array();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  const std::size_t xid = x.id();
  return x.tape().record(Tensor<T>(Shape{1, 1, 1, 1}, acc), x.requires_grad(),
                         [xid](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T>& gx = t.grad_buffer(xid);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                         });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  if (x.value().empty()) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / T(x.value().size()));
}

/// Mean absolute difference, a scalar.
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b, "mean_abs_diff");
  require_same_shape(a.shape(), b.shape(), "mean_abs_diff");
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean_abs_diff: empty tensors");
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(Tensor<T>(Shape{1, 1, 1, 1}, acc / T(n)), a.requires_grad() || b.requires_grad(),
                         [=](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& av = t.node(aid).value;
                           const Tensor<T>& bv = t.node(bid).value;
                           const T k = g[0] / T(n);
                           const bool ga = t.requires_grad(aid), gb = t.requires_grad(bid);
                           for (std::size_t i = 0; i < n; ++i) {
                             const T d = av[i] - bv[i];
                             const T sgn = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
                             if (ga) t.grad_buffer(aid)[i] += k * sgn;
                             if (gb) t.grad_buffer(bid)[i] -= k * sgn;
                           }
                         });
}

/// Sum of several same-shaped operands.
template <class T>
Var<T> add_n(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("add_n: no operands");
  Var<T> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
  return acc;
}

// ---------------------------------------------------------------------------
// Filtering used by the structural-similarity metric

/// Depthwise separable "valid" filtering with the same 1-D taps on both axes.
template <class T>
Var<T> separable_filter_valid(const Var<T>& x, std::vector<T> taps) {
  const Shape s = x.shape();
  const std::size_t k = taps.size();
  if (k == 0 || s.h < k || s.w < k)
    throw ShapeError("separable_filter_valid: " + std::to_string(k) + "-tap window larger than " + to_string(s));
  const std::size_t ho = s.h - k + 1, wo = s.w - k + 1;
  Tensor<T> y(Shape{s.n, s.c, ho, wo});
  AlignedVector<T> tmp(s.h * wo);
  for (std::size_t pl = 0; pl < s.n * s.c; ++pl) {
    const T* src = x.value().data() + pl * s.plane();
    for (std::size_t r = 0; r < s.h; ++r)
      for (std::size_t q = 0; q < wo; ++q) {
        T acc = 0;
        for (std::size_t j = 0; j < k; ++j) acc += taps[j] * src[r * s.w + q + j];
        tmp[r * wo + q] = acc;
      }
    T* dst = y.data() + pl * ho * wo;
    for (std::size_t r = 0; r < ho; ++r)
      for (std::size_t q = 0; q < wo; ++q) {
        T acc = 0;
        for (std::size_t i = 0; i < k; ++i) acc += taps[i] * tmp[(r + i) * wo + q];
        dst[r * wo + q] = acc;
      }
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(xid);
    AlignedVector<T> tmp(s.h * wo);
    for (std::size_t pl = 0; pl < s.n * s.c; ++pl) {
      const T* gy = g.data() + pl * ho * wo;
      std::fill(tmp.begin(), tmp.end(), T(0));
      for (std::size_t r = 0; r < ho; ++r)
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t q = 0; q < wo; ++q) tmp[(r + i) * wo + q] += taps[i] * gy[r * wo + q];
      T* d = gx.data() + pl * s.plane();
      for (std::size_t r = 0; r < s.h; ++r)
        for (std::size_t q = 0; q < wo; ++q)
          for (std::size_t j = 0; j < k; ++j) d[r * s.w + q + j] += taps[j] * tmp[r * wo + q];
    }
  });
}

/// 2x2 average pooling with stride 2; a trailing odd row/column is dropped.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t ho = s.h / 2, wo = s.w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("avg_pool2: input too small " + to_string(s));
  Tensor<T> y(Shape{s.n, s.c, ho, wo});
  for (std::size_t pl = 0; pl < s.n * s.c; ++pl) {
    const T* src = x.value().data() + pl * s.plane();
    for (std::size_t r = 0; r < ho; ++r)
      for (std::size_t q = 0; q < wo; ++q)
        y[pl * ho * wo + r * wo + q] = T(0.25) * (src[2 * r * s.w + 2 * q] + src[2 * r * s.w + 2 * q + 1] +
                                                  src[(2 * r + 1) * s.w + 2 * q] + src[(2 * r + 1) * s.w + 2 * q + 1]);
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(xid);
    for (std::size_t pl = 0; pl < s.n * s.c; ++pl) {
      T* d = gx.data() + pl * s.plane();
      for (std::size_t r = 0; r < ho; ++r)
        for (std::size_t q = 0; q < wo; ++q) {
          const T v = T(0.25) * g[pl * ho * wo + r * wo + q];
          d[2 * r * s.w + 2 * q] += v;
          d[2 * r * s.w + 2 * q + 1] += v;
          d[(2 * r + 1) * s.w + 2 * q] += v;
          d[(2 * r + 1) * s.w + 2 * q + 1] += v;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Binarization

enum class BinarizerMode { deterministic, stochastic };

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

/// Maps z in [-1, 1] to {-1, +1}. Deterministic mode takes the sign (0 -> +1);
/// stochastic mode emits +1 with probability (1 + z) / 2. The backward pass is
/// the identity (straight-through).
template <class T>
Var<T> binarize(const Var<T>& z, BinarizerMode mode, std::mt19937_64* rng = nullptr) {
  if (mode == BinarizerMode::stochastic && rng == nullptr)
    throw std::invalid_argument("binarize: stochastic mode requires an rng");
  const Tensor<T>& zv = z.value();
  Tensor<T> y(zv.shape());
  for (std::size_t i = 0; i < zv.size(); ++i) {
    if (mode == BinarizerMode::deterministic) {
      y[i] = zv[i] >= T(0) ? T(1) : T(-1);
    } else {
      const double p_one = (1.0 + double(zv[i])) / 2.0;
      y[i] = uniform01(*rng) < p_one ? T(1) : T(-1);
    }
  }
  const std::size_t zid = z.id();
  return z.tape().record(std::move(y), z.requires_grad(),
                         [zid](Tape<T>& t, const Tensor<T>& g) { t.grad_buffer(zid) += g; });
}

}  // namespace bcd
