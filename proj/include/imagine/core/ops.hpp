#pragma once

#include <cmath>
#include <vector>

#include "imagine/core/tape.hpp"

namespace imagine {

// Differentiable tensor operations. Conventions:
//  - feature maps are (h, w, ch) with ch contiguous;
//  - convolutions are either size-preserving (stride 1, odd kernel, zero
//    padding) or valid with stride (used by the agent trunks);
//  - every op propagates needs_grad and skips gradient work for constant
//    parents, which is what makes frozen-model rollouts cheap.

namespace detail {

template <typename T>
inline T stable_sigmoid(T x) {
  if (x >= 0) {
    const T e = std::exp(-x);
    return 1 / (1 + e);
  }
  const T e = std::exp(x);
  return e / (1 + e);
}

template <typename T>
inline T stable_softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Dot product with four accumulators so the compiler can vectorize the
// reduction without reassociation flags.
template <typename T>
inline T dot_n(const T* a, const T* b, long n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  long i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
inline void axpy_n(T a, const T* x, T* y, long n) {
  for (long i = 0; i < n; ++i) y[i] += a * x[i];
}

/// out[:] += sum_i rows[base + i*ld][:] * coeff[i], four rows at a time.
/// The unroll quarters the out-row load/store traffic, which dominates the
/// convolution kernels at these small spatial sizes.
template <typename T>
inline void axpy_rows(const T* __restrict__ coeff, long n_rows,
                      const T* __restrict__ rows, long ld, T* __restrict__ out,
                      long width) {
  long i = 0;
  for (; i + 4 <= n_rows; i += 4) {
    const T c0 = coeff[i], c1 = coeff[i + 1], c2 = coeff[i + 2], c3 = coeff[i + 3];
    if (c0 == T(0) && c1 == T(0) && c2 == T(0) && c3 == T(0)) continue;
    const T* __restrict__ r0 = rows + i * ld;
    const T* __restrict__ r1 = r0 + ld;
    const T* __restrict__ r2 = r1 + ld;
    const T* __restrict__ r3 = r2 + ld;
    for (long j = 0; j < width; ++j)
      out[j] += c0 * r0[j] + c1 * r1[j] + c2 * r2[j] + c3 * r3[j];
  }
  for (; i < n_rows; ++i) {
    const T c = coeff[i];
    if (c == T(0)) continue;
    const T* __restrict__ r = rows + i * ld;
    for (long j = 0; j < width; ++j) out[j] += c * r[j];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Var unary_elementwise(Tape<T>& tp, Var x, Fwd fwd, Bwd bwd_factor_from_in_out) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out(xv.shape());
  for (long i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  Var y = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y, bwd_factor_from_in_out](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      const Tensor<T>& xv2 = t.val(x);
      const Tensor<T>& yv = t.val(y);
      Tensor<T>& gx = t.grad_buffer(x);
      for (long i = 0; i < g.numel(); ++i) gx[i] += g[i] * bwd_factor_from_in_out(xv2[i], yv[i]);
    });
  }
  return y;
}

template <typename T>
Var relu(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return v > 0 ? v : T(0); },
      [](T in, T) { return in > 0 ? T(1) : T(0); });
}

template <typename T>
Var sigmoid(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return detail::stable_sigmoid(v); },
      [](T, T out) { return out * (1 - out); });
}

template <typename T>
Var tanh_op(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return std::tanh(v); }, [](T, T out) { return 1 - out * out; });
}

template <typename T>
Var softplus(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return detail::stable_softplus(v); },
      [](T in, T) { return detail::stable_sigmoid(in); });
}

template <typename T>
Var exp_op(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}

template <typename T>
Var log_op(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return std::log(v); }, [](T in, T) { return 1 / in; });
}

template <typename T>
Var square(Tape<T>& tp, Var x) {
  return unary_elementwise(
      tp, x, [](T v) { return v * v; }, [](T in, T) { return 2 * in; });
}

/// a*x + b, elementwise with scalar coefficients.
template <typename T>
Var affine(Tape<T>& tp, Var x, T a, T b) {
  return unary_elementwise(
      tp, x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Var scale(Tape<T>& tp, Var x, T a) {
  return affine(tp, x, a, T(0));
}

template <typename T>
Var add(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  IM_CHECK(av.shape() == bv.shape(), "add: shape mismatch " + shape_str(av.shape()) +
                                         " vs " + shape_str(bv.shape()));
  Tensor<T> out(av.shape());
  for (long i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  Var y = tp.emplace(std::move(out), ng);
  if (ng) {
    tp.set_backward(y, [a, b, y](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      if (t.needs_grad(a)) t.grad_buffer(a).add_(g);
      if (t.needs_grad(b)) t.grad_buffer(b).add_(g);
    });
  }
  return y;
}

template <typename T>
Var sub(Tape<T>& tp, Var a, Var b) {
  return add(tp, a, scale(tp, b, T(-1)));
}

template <typename T>
Var mul(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  IM_CHECK(av.shape() == bv.shape(), "mul: shape mismatch");
  Tensor<T> out(av.shape());
  for (long i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
  const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  Var y = tp.emplace(std::move(out), ng);
  if (ng) {
    tp.set_backward(y, [a, b, y](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      if (t.needs_grad(a)) {
        const Tensor<T>& bv2 = t.val(b);
        Tensor<T>& ga = t.grad_buffer(a);
        for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (t.needs_grad(b)) {
        const Tensor<T>& av2 = t.val(a);
        Tensor<T>& gb = t.grad_buffer(b);
        for (long i = 0; i < g.numel(); ++i) gb[i] += g[i] * av2[i];
      }
    });
  }
  return y;
}

template <typename T>
Var div(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  IM_CHECK(av.shape() == bv.shape(), "div: shape mismatch");
  Tensor<T> out(av.shape());
  for (long i = 0; i < av.numel(); ++i) out[i] = av[i] / bv[i];
  const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  Var y = tp.emplace(std::move(out), ng);
  if (ng) {
    tp.set_backward(y, [a, b, y](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      const Tensor<T>& bv2 = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<T>& ga = t.grad_buffer(a);
        for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] / bv2[i];
      }
      if (t.needs_grad(b)) {
        const Tensor<T>& yv = t.val(y);
        Tensor<T>& gb = t.grad_buffer(b);
        for (long i = 0; i < g.numel(); ++i) gb[i] -= g[i] * yv[i] / bv2[i];
      }
    });
  }
  return y;
}

template <typename T>
Var stop_gradient(Tape<T>& tp, Var x) {
  return tp.constant(tp.val(x));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var reshape(Tape<T>& tp, Var x, Shape shape) {
  Tensor<T> out = tp.val(x).reshaped(std::move(shape));
  Var y = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      Tensor<T>& gx = t.grad_buffer(x);
      for (long i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

template <typename T>
Var flatten(Tape<T>& tp, Var x) {
  return reshape(tp, x, {static_cast<int>(tp.val(x).numel())});
}

/// Concatenate along the last (channel) axis; all leading dims must agree.
template <typename T>
Var concat_last(Tape<T>& tp, const std::vector<Var>& parts) {
  IM_CHECK(!parts.empty(), "concat_last: no inputs");
  const Tensor<T>& first = tp.val(parts[0]);
  const int nd = first.ndim();
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  long rows = 1;
  for (int d : lead) rows *= d;
  int total_ch = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor<T>& v = tp.val(p);
    IM_CHECK(v.ndim() == nd, "concat_last: rank mismatch");
    IM_CHECK(Shape(v.shape().begin(), v.shape().end() - 1) == lead,
             "concat_last: leading dims mismatch");
    total_ch += v.shape().back();
    ng = ng || tp.needs_grad(p);
  }
  Shape out_shape = lead;
  out_shape.push_back(total_ch);
  Tensor<T> out(out_shape);
  int off = 0;
  for (Var p : parts) {
    const Tensor<T>& v = tp.val(p);
    const int ch = v.shape().back();
    for (long r = 0; r < rows; ++r) {
      const T* src = v.data() + r * ch;
      T* dst = out.data() + r * total_ch + off;
      std::copy(src, src + ch, dst);
    }
    off += ch;
  }
  Var y = tp.emplace(std::move(out), ng);
  if (ng) {
    std::vector<Var> ps = parts;
    tp.set_backward(y, [ps, y, rows, total_ch](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      int off2 = 0;
      for (Var p : ps) {
        const int ch = t.val(p).shape().back();
        if (t.needs_grad(p)) {
          Tensor<T>& gp = t.grad_buffer(p);
          for (long r = 0; r < rows; ++r) {
            const T* src = g.data() + r * total_ch + off2;
            T* dst = gp.data() + r * ch;
            for (int c = 0; c < ch; ++c) dst[c] += src[c];
          }
        }
        off2 += ch;
      }
    });
  }
  return y;
}

/// Slice [c0, c0+len) along the last axis.
template <typename T>
Var slice_last(Tape<T>& tp, Var x, int c0, int len) {
  const Tensor<T>& xv = tp.val(x);
  const int ch = xv.shape().back();
  IM_CHECK(c0 >= 0 && len >= 1 && c0 + len <= ch, "slice_last: range out of bounds");
  Shape out_shape = xv.shape();
  out_shape.back() = len;
  long rows = xv.numel() / ch;
  Tensor<T> out(out_shape);
  for (long r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * ch + c0;
    std::copy(src, src + len, out.data() + r * len);
  }
  Var y = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y, c0, len, rows, ch](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      Tensor<T>& gx = t.grad_buffer(x);
      for (long r = 0; r < rows; ++r) {
        const T* src = g.data() + r * len;
        T* dst = gx.data() + r * ch + c0;
        for (int c = 0; c < len; ++c) dst[c] += src[c];
      }
    });
  }
  return y;
}

/// (H, W, C) -> (H/k, W/k, C*k*k); blocks become channels.
template <typename T>
Var space_to_depth(Tape<T>& tp, Var x, int k) {
  const Tensor<T>& xv = tp.val(x);
  IM_CHECK(xv.ndim() == 3, "space_to_depth: expects (h,w,c)");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  IM_CHECK(H % k == 0 && W % k == 0,
           "space_to_depth: spatial dims " + shape_str(xv.shape()) +
               " not divisible by " + std::to_string(k));
  Tensor<T> out({H / k, W / k, C * k * k});
  for (int y = 0; y < H; ++y)
    for (int xph = 0; xph < W; ++xph) {
      const int oy = y / k, ox = xph / k;
      const int block = (y % k) * k + (xph % k);
      const T* src = &xv(y, xph, 0);
      T* dst = &out(oy, ox, block * C);
      std::copy(src, src + C, dst);
    }
  Var yv = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(yv, [x, yv, H, W, C, k](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int y = 0; y < H; ++y)
        for (int xph = 0; xph < W; ++xph) {
          const int oy = y / k, ox = xph / k;
          const int block = (y % k) * k + (xph % k);
          const T* src = &g(oy, ox, block * C);
          T* dst = &gx(y, xph, 0);
          for (int c = 0; c < C; ++c) dst[c] += src[c];
        }
    });
  }
  return yv;
}

/// (H, W, C) -> (H*k, W*k, C/(k*k)); inverse of space_to_depth.
template <typename T>
Var depth_to_space(Tape<T>& tp, Var x, int k) {
  const Tensor<T>& xv = tp.val(x);
  IM_CHECK(xv.ndim() == 3, "depth_to_space: expects (h,w,c)");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  IM_CHECK(C % (k * k) == 0, "depth_to_space: channels not divisible by k*k");
  const int OC = C / (k * k);
  Tensor<T> out({H * k, W * k, OC});
  for (int y = 0; y < H * k; ++y)
    for (int xph = 0; xph < W * k; ++xph) {
      const int block = (y % k) * k + (xph % k);
      const T* src = &xv(y / k, xph / k, block * OC);
      T* dst = &out(y, xph, 0);
      std::copy(src, src + OC, dst);
    }
  Var yv = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(yv, [x, yv, H, W, OC, k](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int y = 0; y < H * k; ++y)
        for (int xph = 0; xph < W * k; ++xph) {
          const int block = (y % k) * k + (xph % k);
          const T* src = &g(y, xph, 0);
          T* dst = &gx(y / k, xph / k, block * OC);
          for (int c = 0; c < OC; ++c) dst[c] += src[c];
        }
    });
  }
  return yv;
}

/// Tile a vector of length L to an (h, w, L) map.
template <typename T>
Var broadcast_plane(Tape<T>& tp, Var v, int h, int w) {
  const Tensor<T>& vv = tp.val(v);
  IM_CHECK(vv.ndim() == 1, "broadcast_plane: expects a vector");
  const int L = vv.dim(0);
  Tensor<T> out({h, w, L});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) std::copy(vv.data(), vv.data() + L, &out(y, x, 0));
  Var yv = tp.emplace(std::move(out), tp.needs_grad(v));
  if (tp.needs_grad(v)) {
    tp.set_backward(yv, [v, yv, h, w, L](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      Tensor<T>& gv = t.grad_buffer(v);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const T* src = &g(y, x, 0);
          for (int c = 0; c < L; ++c) gv[c] += src[c];
        }
    });
  }
  return yv;
}

/// Per-channel global max over (h, w), tiled back to (h, w, c). The backward
/// pass routes each channel's gradient sum to the (first) argmax position.
template <typename T>
Var channel_max_tile(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  IM_CHECK(xv.ndim() == 3, "channel_max_tile: expects (h,w,c)");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  std::vector<T> maxv(C, std::numeric_limits<T>::lowest());
  std::vector<long> arg(C, 0);
  for (int y = 0; y < H; ++y)
    for (int x2 = 0; x2 < W; ++x2) {
      const T* row = &xv(y, x2, 0);
      const long base = (static_cast<long>(y) * W + x2) * C;
      for (int c = 0; c < C; ++c) {
        if (row[c] > maxv[c]) {
          maxv[c] = row[c];
          arg[c] = base + c;
        }
      }
    }
  Tensor<T> out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int x2 = 0; x2 < W; ++x2) std::copy(maxv.begin(), maxv.end(), &out(y, x2, 0));
  Var yv = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(yv, [x, yv, arg, H, W, C](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int c = 0; c < C; ++c) {
        T s = 0;
        for (int y = 0; y < H; ++y)
          for (int x2 = 0; x2 < W; ++x2) s += g(y, x2, c);
        gx[arg[c]] += s;
      }
    });
  }
  return yv;
}

// ---------------------------------------------------------------------------
// convolutions and linear
// ---------------------------------------------------------------------------

/// Size-preserving convolution: stride 1, odd square kernel, zero padding.
/// weight is (k, k, cin, cout), bias (cout).
template <typename T>
Var conv2d_same(Tape<T>& tp, Var x, Var w, Var b) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& wv = tp.val(w);
  const Tensor<T>& bv = tp.val(b);
  IM_CHECK(xv.ndim() == 3 && wv.ndim() == 4, "conv2d_same: bad ranks");
  const int H = xv.dim(0), W = xv.dim(1), CI = xv.dim(2);
  const int K = wv.dim(0), CO = wv.dim(3);
  IM_CHECK(wv.dim(1) == K && K % 2 == 1, "conv2d_same: kernel must be odd square");
  IM_CHECK(wv.dim(2) == CI, "conv2d_same: input channels " + std::to_string(CI) +
                                " do not match kernel " + std::to_string(wv.dim(2)));
  IM_CHECK(bv.ndim() == 1 && bv.dim(0) == CO, "conv2d_same: bias shape");
  const int P = (K - 1) / 2;

  Tensor<T> out({H, W, CO});
  for (int y = 0; y < H; ++y)
    for (int x2 = 0; x2 < W; ++x2) std::copy(bv.data(), bv.data() + CO, &out(y, x2, 0));
  for (int y = 0; y < H; ++y) {
    for (int ky = 0; ky < K; ++ky) {
      const int iy = y + ky - P;
      if (iy < 0 || iy >= H) continue;
      for (int x2 = 0; x2 < W; ++x2) {
        T* orow = &out(y, x2, 0);
        for (int kx = 0; kx < K; ++kx) {
          const int ix = x2 + kx - P;
          if (ix < 0 || ix >= W) continue;
          detail::axpy_rows(&xv(iy, ix, 0), CI, &wv(ky, kx, 0, 0), CO, orow, CO);
        }
      }
    }
  }

  const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
  Var yv = tp.emplace(std::move(out), ng);
  if (ng) {
    tp.set_backward(yv, [x, w, b, yv, H, W, CI, K, CO, P](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      const Tensor<T>& xv2 = t.val(x);
      const Tensor<T>& wv2 = t.val(w);
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (int y = 0; y < H; ++y)
          for (int x2 = 0; x2 < W; ++x2) {
            const T* grow = &g(y, x2, 0);
            for (int co = 0; co < CO; ++co) gb[co] += grow[co];
          }
      }
      if (t.needs_grad(w)) {
        Tensor<T>& gw = t.grad_buffer(w);
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            T* gwbase = &gw(ky, kx, 0, 0);
            for (int y = 0; y < H; ++y) {
              const int iy = y + ky - P;
              if (iy < 0 || iy >= H) continue;
              for (int x2 = 0; x2 < W; ++x2) {
                const int ix = x2 + kx - P;
                if (ix < 0 || ix >= W) continue;
                const T* grow = &g(y, x2, 0);
                const T* xrow = &xv2(iy, ix, 0);
                for (int ci = 0; ci < CI; ++ci) {
                  const T xi = xrow[ci];
                  if (xi == T(0)) continue;
                  detail::axpy_n(xi, grow, gwbase + static_cast<long>(ci) * CO, CO);
                }
              }
            }
          }
      }
      if (t.needs_grad(x)) {
        // Transposed kernel view (k, k, cout, cin) so the inner update over
        // cin is contiguous.
        Tensor<T> wt({K, K, CO, CI});
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx)
            for (int ci = 0; ci < CI; ++ci)
              for (int co = 0; co < CO; ++co) wt(ky, kx, co, ci) = wv2(ky, kx, ci, co);
        Tensor<T>& gx = t.grad_buffer(x);
        for (int y = 0; y < H; ++y) {
          for (int ky = 0; ky < K; ++ky) {
            const int iy = y + ky - P;
            if (iy < 0 || iy >= H) continue;
            for (int x2 = 0; x2 < W; ++x2) {
              const T* grow = &g(y, x2, 0);
              for (int kx = 0; kx < K; ++kx) {
                const int ix = x2 + kx - P;
                if (ix < 0 || ix >= W) continue;
                detail::axpy_rows(grow, CO, &wt(ky, kx, 0, 0), CI, &gx(iy, ix, 0), CI);
              }
            }
          }
        }
      }
    });
  }
  return yv;
}

/// Valid convolution with stride; output (floor((H-k)/s)+1, ..., cout).
template <typename T>
Var conv2d_valid(Tape<T>& tp, Var x, Var w, Var b, int stride) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& wv = tp.val(w);
  const Tensor<T>& bv = tp.val(b);
  IM_CHECK(xv.ndim() == 3 && wv.ndim() == 4, "conv2d_valid: bad ranks");
  const int H = xv.dim(0), W = xv.dim(1), CI = xv.dim(2);
  const int K = wv.dim(0), CO = wv.dim(3);
  IM_CHECK(wv.dim(1) == K && wv.dim(2) == CI, "conv2d_valid: kernel shape");
  IM_CHECK(H >= K && W >= K, "conv2d_valid: input smaller than kernel");
  IM_CHECK(stride >= 1, "conv2d_valid: stride must be >= 1");
  const int OH = (H - K) / stride + 1;
  const int OW = (W - K) / stride + 1;

  Tensor<T> out({OH, OW, CO});
  for (int y = 0; y < OH; ++y)
    for (int x2 = 0; x2 < OW; ++x2) {
      T* orow = &out(y, x2, 0);
      std::copy(bv.data(), bv.data() + CO, orow);
      for (int ky = 0; ky < K; ++ky) {
        const int iy = y * stride + ky;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = x2 * stride + kx;
          detail::axpy_rows(&xv(iy, ix, 0), CI, &wv(ky, kx, 0, 0), CO, orow, CO);
        }
      }
    }

  const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
  Var yv = tp.emplace(std::move(out), ng);
  if (ng) {
    tp.set_backward(yv, [x, w, b, yv, OH, OW, CI, K, CO, stride](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      const Tensor<T>& xv2 = t.val(x);
      const Tensor<T>& wv2 = t.val(w);
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (int y = 0; y < OH; ++y)
          for (int x2 = 0; x2 < OW; ++x2) {
            const T* grow = &g(y, x2, 0);
            for (int co = 0; co < CO; ++co) gb[co] += grow[co];
          }
      }
      if (t.needs_grad(w)) {
        Tensor<T>& gw = t.grad_buffer(w);
        for (int y = 0; y < OH; ++y)
          for (int x2 = 0; x2 < OW; ++x2) {
            const T* grow = &g(y, x2, 0);
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const T* xrow = &xv2(y * stride + ky, x2 * stride + kx, 0);
                T* gwbase = &gw(ky, kx, 0, 0);
                for (int ci = 0; ci < CI; ++ci) {
                  const T xi = xrow[ci];
                  if (xi == T(0)) continue;
                  detail::axpy_n(xi, grow, gwbase + static_cast<long>(ci) * CO, CO);
                }
              }
          }
      }
      if (t.needs_grad(x)) {
        Tensor<T> wt({K, K, CO, CI});
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx)
            for (int ci = 0; ci < CI; ++ci)
              for (int co = 0; co < CO; ++co) wt(ky, kx, co, ci) = wv2(ky, kx, ci, co);
        Tensor<T>& gx = t.grad_buffer(x);
        for (int y = 0; y < OH; ++y)
          for (int x2 = 0; x2 < OW; ++x2) {
            const T* grow = &g(y, x2, 0);
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                detail::axpy_rows(grow, CO, &wt(ky, kx, 0, 0), CI,
                                  &gx(y * stride + ky, x2 * stride + kx, 0), CI);
              }
          }
      }
    });
  }
  return yv;
}

/// Fully connected layer: x (n), w (n, m), b (m) -> (m).
template <typename T>
Var linear(Tape<T>& tp, Var x, Var w, Var b) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& wv = tp.val(w);
  const Tensor<T>& bv = tp.val(b);
  IM_CHECK(xv.ndim() == 1 && wv.ndim() == 2, "linear: bad ranks");
  const int N = xv.dim(0), M = wv.dim(1);
  IM_CHECK(wv.dim(0) == N, "linear: weight rows " + std::to_string(wv.dim(0)) +
                               " vs input " + std::to_string(N));
  IM_CHECK(bv.dim(0) == M, "linear: bias size");
  Tensor<T> out({M});
  std::copy(bv.data(), bv.data() + M, out.data());
  for (int n = 0; n < N; ++n) {
    const T xi = xv[n];
    if (xi == T(0)) continue;
    detail::axpy_n(xi, &wv(n, 0), out.data(), M);
  }
  const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
  Var yv = tp.emplace(std::move(out), ng);
  if (ng) {
    tp.set_backward(yv, [x, w, b, yv, N, M](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(yv);
      if (t.needs_grad(b)) t.grad_buffer(b).add_(g);
      if (t.needs_grad(w)) {
        const Tensor<T>& xv2 = t.val(x);
        Tensor<T>& gw = t.grad_buffer(w);
        for (int n = 0; n < N; ++n) {
          const T xi = xv2[n];
          if (xi == T(0)) continue;
          detail::axpy_n(xi, g.data(), &gw(n, 0), M);
        }
      }
      if (t.needs_grad(x)) {
        const Tensor<T>& wv2 = t.val(w);
        Tensor<T>& gx = t.grad_buffer(x);
        for (int n = 0; n < N; ++n) gx[n] += detail::dot_n(&wv2(n, 0), g.data(), M);
      }
    });
  }
  return yv;
}

// ---------------------------------------------------------------------------
// reductions and vector helpers
// ---------------------------------------------------------------------------

template <typename T>
Var sum_all(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out = Tensor<T>::scalar(xv.sum());
  Var y = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y](Tape<T>& t) {
      const T g = t.grad_of(y)[0];
      Tensor<T>& gx = t.grad_buffer(x);
      for (long i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

template <typename T>
Var mean_all(Tape<T>& tp, Var x) {
  const long n = tp.val(x).numel();
  return scale(tp, sum_all(tp, x), T(1) / static_cast<T>(n));
}

template <typename T>
Var pick(Tape<T>& tp, Var x, int idx) {
  const Tensor<T>& xv = tp.val(x);
  IM_CHECK(idx >= 0 && idx < xv.numel(), "pick: index out of range");
  Var y = tp.emplace(Tensor<T>::scalar(xv[idx]), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y, idx](Tape<T>& t) {
      t.grad_buffer(x)[idx] += t.grad_of(y)[0];
    });
  }
  return y;
}

template <typename T>
Var dot(Tape<T>& tp, Var a, Var b) {
  return sum_all(tp, mul(tp, a, b));
}

template <typename T>
Var softmax(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  IM_CHECK(xv.ndim() == 1, "softmax: expects a vector");
  const int n = xv.dim(0);
  T mx = xv[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, xv[i]);
  Tensor<T> out({n});
  T z = 0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(xv[i] - mx);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
  Var y = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y, n](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      const Tensor<T>& s = t.val(y);
      T gs = 0;
      for (int i = 0; i < n; ++i) gs += g[i] * s[i];
      Tensor<T>& gx = t.grad_buffer(x);
      for (int i = 0; i < n; ++i) gx[i] += s[i] * (g[i] - gs);
    });
  }
  return y;
}

template <typename T>
Var log_softmax(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  IM_CHECK(xv.ndim() == 1, "log_softmax: expects a vector");
  const int n = xv.dim(0);
  T mx = xv[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, xv[i]);
  T z = 0;
  for (int i = 0; i < n; ++i) z += std::exp(xv[i] - mx);
  const T lse = mx + std::log(z);
  Tensor<T> out({n});
  for (int i = 0; i < n; ++i) out[i] = xv[i] - lse;
  Var y = tp.emplace(std::move(out), tp.needs_grad(x));
  if (tp.needs_grad(x)) {
    tp.set_backward(y, [x, y, n](Tape<T>& t) {
      const Tensor<T>& g = t.grad_of(y);
      const Tensor<T>& ls = t.val(y);
      T gs = 0;
      for (int i = 0; i < n; ++i) gs += g[i];
      Tensor<T>& gx = t.grad_buffer(x);
      for (int i = 0; i < n; ++i) gx[i] += g[i] - std::exp(ls[i]) * gs;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Bernoulli scoring
// ---------------------------------------------------------------------------

/// Sum over elements of p*log(q) + (1-p)*log(1-q) with q = sigmoid(log_odds),
/// optionally plus the entropy of p (making the result a negative KL that
/// peaks at exactly 0 when q == p). Gradient w.r.t. log_odds is (p - q).
template <typename T>
Var bernoulli_score(Tape<T>& tp, Var log_odds, const Tensor<T>& targets,
                    bool include_target_entropy) {
  const Tensor<T>& lv = tp.val(log_odds);
  IM_CHECK(lv.shape() == targets.shape(), "bernoulli_score: shape mismatch");
  double acc = 0;
  for (long i = 0; i < lv.numel(); ++i) {
    const T l = lv[i];
    const T p = targets[i];
    // log q = -softplus(-l), log(1-q) = -softplus(l)
    acc -= static_cast<double>(p) * detail::stable_softplus(-l);
    acc -= static_cast<double>(1 - p) * detail::stable_softplus(l);
    if (include_target_entropy) {
      if (p > 0) acc -= static_cast<double>(p) * std::log(static_cast<double>(p));
      if (p < 1) acc -= static_cast<double>(1 - p) * std::log(static_cast<double>(1 - p));
    }
  }
  Var y = tp.emplace(Tensor<T>::scalar(static_cast<T>(acc)), tp.needs_grad(log_odds));
  if (tp.needs_grad(log_odds)) {
    Tensor<T> tgt = targets;
    tp.set_backward(y, [log_odds, y, tgt](Tape<T>& t) {
      const T g = t.grad_of(y)[0];
      const Tensor<T>& lv2 = t.val(log_odds);
      Tensor<T>& gx = t.grad_buffer(log_odds);
      for (long i = 0; i < lv2.numel(); ++i) {
        gx[i] += g * (tgt[i] - detail::stable_sigmoid(lv2[i]));
      }
    });
  }
  return y;
}

}  // namespace imagine
