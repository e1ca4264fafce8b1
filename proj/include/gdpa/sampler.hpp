#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gdpa/ops.hpp"
#include "gdpa/tape.hpp"
#include "gdpa/tensor.hpp"

// Differentiable translation (affine grid + bilinear sampling), centered
// mask/pattern construction, and weighted patch injection.
//
// Conventions: x is the column coordinate, y the row; a source pixel u_jk
// lives at column j, row k. The grid maps a target pixel to source
// coordinates x_s = x_t + dx, y_s = y_t + dy in array coordinates, with the
// displacement derived from a normalized location l in [-1,1]^2. Sampling
// outside the source is zero-padded. At exactly-integer source coordinates
// the gradient takes the left limit of the bilinear weight derivative.

namespace gdpa {

enum class GridScale {
  ImageExtent,  // dx = (image_w/2) * l_x; full-image reach (default)
  PatchExtent,  // dx = (patch_w/2) * l_x
};

struct PatchPlacement {
  double lx = 0.0;
  double ly = 0.0;
  double alpha = 1.0;
  int patch_w = 0;
  int patch_h = 0;
  int image_w = 0;
  int image_h = 0;

  void validate() const {
    if (lx < -1.0 || lx > 1.0 || ly < -1.0 || ly > 1.0)
      throw RangeError("placement: location must be in [-1,1]^2");
    if (alpha < 0.0 || alpha > 1.0) throw RangeError("placement: alpha must be in [0,1]");
    if (patch_w <= 0 || patch_h <= 0 || patch_w > image_w || patch_h > image_h)
      throw ShapeError("placement: patch must be non-empty and fit inside the image");
  }
};

template <typename T>
struct AffineGrid {
  int h = 0, w = 0;
  T dx = T(0), dy = T(0);  // constant translation, pixels
  std::vector<T> xs, ys;   // per-target-pixel source coordinates, row-major
};

// Pixel displacement of one normalized location unit.
inline double grid_scale_x(const PatchPlacement& pl, GridScale gs) {
  return (gs == GridScale::ImageExtent ? pl.image_w : pl.patch_w) / 2.0;
}
inline double grid_scale_y(const PatchPlacement& pl, GridScale gs) {
  return (gs == GridScale::ImageExtent ? pl.image_h : pl.patch_h) / 2.0;
}

template <typename T>
AffineGrid<T> affine_grid(const PatchPlacement& pl, GridScale gs = GridScale::ImageExtent) {
  pl.validate();
  AffineGrid<T> g;
  g.h = pl.image_h;
  g.w = pl.image_w;
  g.dx = static_cast<T>(grid_scale_x(pl, gs) * pl.lx);
  g.dy = static_cast<T>(grid_scale_y(pl, gs) * pl.ly);
  g.xs.resize(static_cast<size_t>(g.h) * g.w);
  g.ys.resize(static_cast<size_t>(g.h) * g.w);
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c) {
      g.xs[static_cast<size_t>(r) * g.w + c] = static_cast<T>(c) + g.dx;
      g.ys[static_cast<size_t>(r) * g.w + c] = static_cast<T>(r) + g.dy;
    }
  return g;
}

namespace detail {

// 4-neighbor gather over C planes. The result is clamped to the hull of the
// gathered values (zero included, matching zero padding), which pins down
// the exact-arithmetic range under rounding: sampling a {0,1} mask can never
// leave [0,1], and an identity grid reproduces the source bit-exactly.
template <typename T>
void bilinear_gather(const T* src, int64_t C, int64_t H, int64_t W, const T* xs, const T* ys,
                     T* out) {
  const int64_t plane = H * W;
  for (int64_t i = 0; i < plane; ++i) {
    const T x = xs[i];
    const T y = ys[i];
    const int64_t x0 = static_cast<int64_t>(std::ceil(static_cast<double>(x))) - 1;
    const int64_t y0 = static_cast<int64_t>(std::ceil(static_cast<double>(y))) - 1;
    const int64_t x1 = x0 + 1, y1 = y0 + 1;
    const T wx1 = x - static_cast<T>(x0);
    const T wx0 = T(1) - wx1;
    const T wy1 = y - static_cast<T>(y0);
    const T wy0 = T(1) - wy1;
    const bool i00 = x0 >= 0 && x0 < W && y0 >= 0 && y0 < H;
    const bool i01 = x0 >= 0 && x0 < W && y1 >= 0 && y1 < H;
    const bool i10 = x1 >= 0 && x1 < W && y0 >= 0 && y0 < H;
    const bool i11 = x1 >= 0 && x1 < W && y1 >= 0 && y1 < H;
    for (int64_t ch = 0; ch < C; ++ch) {
      const T* sp = src + ch * plane;
      const T u00 = i00 ? sp[y0 * W + x0] : T(0);
      const T u01 = i01 ? sp[y1 * W + x0] : T(0);
      const T u10 = i10 ? sp[y0 * W + x1] : T(0);
      const T u11 = i11 ? sp[y1 * W + x1] : T(0);
      T v = wx0 * wy0 * u00 + wx0 * wy1 * u01 + wx1 * wy0 * u10 + wx1 * wy1 * u11;
      const T lo = std::min(std::min(std::min(u00, u01), std::min(u10, u11)), T(0));
      const T hi = std::max(std::max(std::max(u00, u01), std::max(u10, u11)), T(0));
      out[ch * plane + i] = std::min(std::max(v, lo), hi);
    }
  }
}

// Gradients of the gather w.r.t. source pixels and grid coordinates.
// Any of the output buffers may be null.
template <typename T>
void bilinear_scatter(const T* src, int64_t C, int64_t H, int64_t W, const T* xs, const T* ys,
                      const T* dout, T* dsrc, T* dxs, T* dys) {
  const int64_t plane = H * W;
  for (int64_t i = 0; i < plane; ++i) {
    const T x = xs[i];
    const T y = ys[i];
    const int64_t x0 = static_cast<int64_t>(std::ceil(static_cast<double>(x))) - 1;
    const int64_t y0 = static_cast<int64_t>(std::ceil(static_cast<double>(y))) - 1;
    const int64_t x1 = x0 + 1, y1 = y0 + 1;
    const T wx1 = x - static_cast<T>(x0);
    const T wx0 = T(1) - wx1;
    const T wy1 = y - static_cast<T>(y0);
    const T wy0 = T(1) - wy1;
    const bool i00 = x0 >= 0 && x0 < W && y0 >= 0 && y0 < H;
    const bool i01 = x0 >= 0 && x0 < W && y1 >= 0 && y1 < H;
    const bool i10 = x1 >= 0 && x1 < W && y0 >= 0 && y0 < H;
    const bool i11 = x1 >= 0 && x1 < W && y1 >= 0 && y1 < H;
    T gx = T(0), gy = T(0);
    for (int64_t ch = 0; ch < C; ++ch) {
      const T g = dout[ch * plane + i];
      if (g == T(0) && !dxs && !dys) continue;
      const T* sp = src + ch * plane;
      const T u00 = i00 ? sp[y0 * W + x0] : T(0);
      const T u01 = i01 ? sp[y1 * W + x0] : T(0);
      const T u10 = i10 ? sp[y0 * W + x1] : T(0);
      const T u11 = i11 ? sp[y1 * W + x1] : T(0);
      if (dsrc) {
        T* dp = dsrc + ch * plane;
        if (i00) dp[y0 * W + x0] += g * wx0 * wy0;
        if (i01) dp[y1 * W + x0] += g * wx0 * wy1;
        if (i10) dp[y0 * W + x1] += g * wx1 * wy0;
        if (i11) dp[y1 * W + x1] += g * wx1 * wy1;
      }
      gx += g * (-(u00 * wy0 + u01 * wy1) + (u10 * wy0 + u11 * wy1));
      gy += g * (-(u00 * wx0 + u10 * wx1) + (u01 * wx0 + u11 * wx1));
    }
    if (dxs) dxs[i] += gx;
    if (dys) dys[i] += gy;
  }
}

}  // namespace detail

// Standalone single-image sampler (no tape); the building block under
// translate() and directly testable against the translation oracle.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& src, const AffineGrid<T>& grid) {
  if (src.rank() != 3) throw ShapeError("bilinear_sample: expects CHW source");
  const int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (grid.h != H || grid.w != W)
    throw ShapeError("bilinear_sample: grid does not match source spatial shape");
  Tensor<T> out = Tensor<T>::zeros({C, H, W});
  detail::bilinear_gather(src.data(), C, H, W, grid.xs.data(), grid.ys.data(), out.data());
  return out;
}

template <typename T>
void bilinear_sample_backward(const Tensor<T>& src, const AffineGrid<T>& grid,
                              const std::vector<T>& dout, std::vector<T>* dsrc,
                              std::vector<T>* dxs, std::vector<T>* dys) {
  const int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (dsrc) dsrc->assign(static_cast<size_t>(C * H * W), T(0));
  if (dxs) dxs->assign(static_cast<size_t>(H * W), T(0));
  if (dys) dys->assign(static_cast<size_t>(H * W), T(0));
  detail::bilinear_scatter(src.data(), C, H, W, grid.xs.data(), grid.ys.data(), dout.data(),
                           dsrc ? dsrc->data() : nullptr, dxs ? dxs->data() : nullptr,
                           dys ? dys->data() : nullptr);
}

// ---------------------------------------------------------------------------
// translate: tape op, image (C,H,W) with loc {2} or batch (N,C,H,W) with loc
// (N,2). loc holds (l_x, l_y); scale_x/scale_y convert one location unit to
// pixels. Gradient flows to both the image and loc.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> translate(Tape<T>* tape, const Tensor<T>& image, const Tensor<T>& loc, T scale_x,
                    T scale_y) {
  const bool batched = image.rank() == 4;
  if (!batched && image.rank() != 3)
    throw ShapeError("translate: expects CHW or NCHW image, got " + shape_str(image.shape()));
  const int64_t N = batched ? image.dim(0) : 1;
  const int64_t C = image.dim(batched ? 1 : 0);
  const int64_t H = image.dim(batched ? 2 : 1);
  const int64_t W = image.dim(batched ? 3 : 2);
  if (loc.numel() != N * 2)
    throw ShapeError("translate: loc must hold 2 coordinates per image");

  Tensor<T> out = Tensor<T>::zeros(image.shape());
  std::vector<T> xs(static_cast<size_t>(H * W)), ys(static_cast<size_t>(H * W));
  auto fill_grid = [&](T dx, T dy) {
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < W; ++c) {
        xs[static_cast<size_t>(r * W + c)] = static_cast<T>(c) + dx;
        ys[static_cast<size_t>(r * W + c)] = static_cast<T>(r) + dy;
      }
  };
  for (int64_t n = 0; n < N; ++n) {
    fill_grid(scale_x * loc.data()[n * 2 + 0], scale_y * loc.data()[n * 2 + 1]);
    detail::bilinear_gather(image.data() + n * C * H * W, C, H, W, xs.data(), ys.data(),
                            out.data() + n * C * H * W);
  }

  if (detail::track(tape, {&image, &loc})) {
    out.set_requires_grad(true);
    int ii = tape->assign_id(const_cast<Tensor<T>&>(image));
    int il = tape->assign_id(const_cast<Tensor<T>&>(loc));
    auto dimg = image.impl(), dloc = loc.impl(), dout = out.impl();
    tape->record(OpKind::Translate, {ii, il}, out,
                 [dimg, dloc, dout, N, C, H, W, scale_x, scale_y]() {
      if (dout->g.empty()) return;
      const bool want_img = dimg->requires_grad;
      const bool want_loc = dloc->requires_grad;
      if (!want_img && !want_loc) return;
      if (want_img) detail::ensure_g(*dimg);
      if (want_loc) detail::ensure_g(*dloc);
      std::vector<T> xs(static_cast<size_t>(H * W)), ys(static_cast<size_t>(H * W));
      std::vector<T> dxs, dys;
      for (int64_t n = 0; n < N; ++n) {
        const T dx = scale_x * dloc->v[n * 2 + 0];
        const T dy = scale_y * dloc->v[n * 2 + 1];
        for (int64_t r = 0; r < H; ++r)
          for (int64_t c = 0; c < W; ++c) {
            xs[static_cast<size_t>(r * W + c)] = static_cast<T>(c) + dx;
            ys[static_cast<size_t>(r * W + c)] = static_cast<T>(r) + dy;
          }
        if (want_loc) {
          dxs.assign(static_cast<size_t>(H * W), T(0));
          dys.assign(static_cast<size_t>(H * W), T(0));
        }
        detail::bilinear_scatter(dimg->v.data() + n * C * H * W, C, H, W, xs.data(), ys.data(),
                                 dout->g.data() + n * C * H * W,
                                 want_img ? dimg->g.data() + n * C * H * W : nullptr,
                                 want_loc ? dxs.data() : nullptr,
                                 want_loc ? dys.data() : nullptr);
        if (want_loc) {
          T ax = T(0), ay = T(0);
          for (T v : dxs) ax += v;
          for (T v : dys) ay += v;
          dloc->g[n * 2 + 0] += scale_x * ax;
          dloc->g[n * 2 + 1] += scale_y * ay;
        }
      }
    });
  }
  return out;
}

// Scalar-location convenience for single images.
template <typename T>
Tensor<T> translate(Tape<T>* tape, const Tensor<T>& image, T lx, T ly,
                    GridScale gs = GridScale::ImageExtent, int patch_w = 0, int patch_h = 0) {
  if (image.rank() != 3) throw ShapeError("translate: expects CHW image");
  const int64_t H = image.dim(1), W = image.dim(2);
  const T sx = static_cast<T>((gs == GridScale::ImageExtent ? W : patch_w) / 2.0);
  const T sy = static_cast<T>((gs == GridScale::ImageExtent ? H : patch_h) / 2.0);
  Tensor<T> loc = Tensor<T>::from({2}, {lx, ly});
  return translate(tape, image, loc, sx, sy);
}

// ---------------------------------------------------------------------------
// Centered mask / zero-padded pattern
// ---------------------------------------------------------------------------

// 1HW mask, 1 on the centered patch_h x patch_w window. For odd leftover
// margins the window anchors at floor((extent - patch_extent)/2).
template <typename T>
Tensor<T> make_center_mask(const PatchPlacement& pl) {
  pl.validate();
  Tensor<T> m = Tensor<T>::zeros({1, pl.image_h, pl.image_w});
  const int top = (pl.image_h - pl.patch_h) / 2;
  const int left = (pl.image_w - pl.patch_w) / 2;
  for (int r = 0; r < pl.patch_h; ++r)
    for (int c = 0; c < pl.patch_w; ++c)
      m.data()[static_cast<int64_t>(top + r) * pl.image_w + (left + c)] = T(1);
  return m;
}

// Embeds a pattern (C,ph,pw) or (N,C,ph,pw) into a zero image of the
// placement's size, at the same centered window the mask uses.
template <typename T>
Tensor<T> pad_center(Tape<T>* tape, const Tensor<T>& pattern, int image_h, int image_w) {
  const bool batched = pattern.rank() == 4;
  if (!batched && pattern.rank() != 3)
    throw ShapeError("pad_center: expects CHW or NCHW pattern");
  const int64_t N = batched ? pattern.dim(0) : 1;
  const int64_t C = pattern.dim(batched ? 1 : 0);
  const int64_t PH = pattern.dim(batched ? 2 : 1);
  const int64_t PW = pattern.dim(batched ? 3 : 2);
  if (PH > image_h || PW > image_w) throw ShapeError("pad_center: pattern larger than image");
  const int64_t top = (image_h - PH) / 2;
  const int64_t left = (image_w - PW) / 2;

  Shape out_shape = batched ? Shape{N, C, image_h, image_w} : Shape{C, image_h, image_w};
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = pattern.data() + nc * PH * PW;
    T* dst = out.data() + nc * image_h * image_w;
    for (int64_t r = 0; r < PH; ++r)
      for (int64_t c = 0; c < PW; ++c) dst[(top + r) * image_w + (left + c)] = src[r * PW + c];
  }

  if (detail::track(tape, {&pattern})) {
    out.set_requires_grad(true);
    int ip = tape->assign_id(const_cast<Tensor<T>&>(pattern));
    auto dp = pattern.impl(), dout = out.impl();
    const int64_t ih = image_h, iw = image_w;
    tape->record(OpKind::PadCenter, {ip}, out, [dp, dout, N, C, PH, PW, top, left, ih, iw]() {
      if (dout->g.empty() || !dp->requires_grad) return;
      detail::ensure_g(*dp);
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T* gsrc = dp->g.data() + nc * PH * PW;
        const T* gdst = dout->g.data() + nc * ih * iw;
        for (int64_t r = 0; r < PH; ++r)
          for (int64_t c = 0; c < PW; ++c) gsrc[r * PW + c] += gdst[(top + r) * iw + (left + c)];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// inject: x_adv = (1-m) * x + m * p, computed as x + m*(p - x). m broadcasts
// over channels. The per-pixel deviation is nudged so that the measured
// |x_adv - x| never exceeds m even after rounding.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline T blend_pixel(T x, T mv, T p) {
  // convex form keeps the m=0 and m=1 endpoints bit-exact; the nudge keeps
  // the measured per-pixel deviation within m under rounding
  T xa = (T(1) - mv) * x + mv * p;
  while (xa - x > mv) xa = std::nextafter(xa, x);
  while (x - xa > mv) xa = std::nextafter(xa, x);
  return xa;
}

}  // namespace detail

template <typename T>
Tensor<T> inject(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& m, const Tensor<T>& p) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw ShapeError("inject: expects CHW or NCHW image");
  if (!x.same_shape(p)) throw ShapeError("inject: image/pattern shape mismatch");
  const int64_t N = batched ? x.dim(0) : 1;
  const int64_t C = x.dim(batched ? 1 : 0);
  const int64_t H = x.dim(batched ? 2 : 1);
  const int64_t W = x.dim(batched ? 3 : 2);
  Shape want_m = batched ? Shape{N, 1, H, W} : Shape{1, H, W};
  if (m.shape() != want_m)
    throw ShapeError("inject: mask must be " + shape_str(want_m) + ", got " +
                     shape_str(m.shape()));
  for (int64_t i = 0; i < m.numel(); ++i) {
    const T mv = m.data()[i];
    if (!(mv >= T(0) && mv <= T(1))) throw RangeError("inject: mask value outside [0,1]");
  }

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const int64_t plane = H * W;
  for (int64_t n = 0; n < N; ++n) {
    const T* mp = m.data() + n * plane;
    for (int64_t ch = 0; ch < C; ++ch) {
      const T* xp = x.data() + (n * C + ch) * plane;
      const T* pp = p.data() + (n * C + ch) * plane;
      T* op = out.data() + (n * C + ch) * plane;
      for (int64_t i = 0; i < plane; ++i) op[i] = detail::blend_pixel(xp[i], mp[i], pp[i]);
    }
  }

  if (detail::track(tape, {&x, &m, &p})) {
    out.set_requires_grad(true);
    int ix = tape->assign_id(const_cast<Tensor<T>&>(x));
    int im = tape->assign_id(const_cast<Tensor<T>&>(m));
    int ip = tape->assign_id(const_cast<Tensor<T>&>(p));
    auto dx = x.impl(), dm = m.impl(), dp = p.impl(), dout = out.impl();
    tape->record(OpKind::Blend, {ix, im, ip}, out, [dx, dm, dp, dout, N, C, plane]() {
      if (dout->g.empty()) return;
      if (dx->requires_grad) detail::ensure_g(*dx);
      if (dm->requires_grad) detail::ensure_g(*dm);
      if (dp->requires_grad) detail::ensure_g(*dp);
      for (int64_t n = 0; n < N; ++n) {
        const T* mp = dm->v.data() + n * plane;
        for (int64_t ch = 0; ch < C; ++ch) {
          const int64_t off = (n * C + ch) * plane;
          const T* g = dout->g.data() + off;
          if (dx->requires_grad) {
            T* gx = dx->g.data() + off;
            for (int64_t i = 0; i < plane; ++i) gx[i] += g[i] * (T(1) - mp[i]);
          }
          if (dp->requires_grad) {
            T* gp = dp->g.data() + off;
            for (int64_t i = 0; i < plane; ++i) gp[i] += g[i] * mp[i];
          }
          if (dm->requires_grad) {
            T* gm = dm->g.data() + n * plane;
            const T* xv = dx->v.data() + off;
            const T* pv = dp->v.data() + off;
            for (int64_t i = 0; i < plane; ++i) gm[i] += g[i] * (pv[i] - xv[i]);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace gdpa
