#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gdpa/tape.hpp"
#include "gdpa/tensor.hpp"

// Reverse-mode ops over dense tensors. Exactly the operator set the attack
// pipeline needs: elementwise kinds, conv2d, linear, 2x2 max-pool, reshape,
// sum and softmax cross-entropy. All loops are sequential with a fixed
// iteration order, so replaying a forward/backward pass is bit-identical.

namespace gdpa {
namespace detail {

template <typename T>
inline void ensure_g(TensorData<T>& d) {
  if (d.g.empty()) d.g.assign(d.v.size(), T(0));
}

template <typename T>
inline bool track(Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
  if (!tape) return false;
  for (auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise kinds
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  detail::check_finite(a, "add");
  detail::check_finite(b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    int ib = tape->assign_id(const_cast<Tensor<T>&>(b));
    auto da = a.impl(), db = b.impl(), dout = out.impl();
    tape->record(OpKind::Add, {ia, ib}, out, [da, db, dout]() {
      if (dout->g.empty()) return;
      if (da->requires_grad) {
        detail::ensure_g(*da);
        for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += dout->g[i];
      }
      if (db->requires_grad) {
        detail::ensure_g(*db);
        for (size_t i = 0; i < db->v.size(); ++i) db->g[i] += dout->g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  detail::check_finite(a, "sub");
  detail::check_finite(b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    int ib = tape->assign_id(const_cast<Tensor<T>&>(b));
    auto da = a.impl(), db = b.impl(), dout = out.impl();
    tape->record(OpKind::Sub, {ia, ib}, out, [da, db, dout]() {
      if (dout->g.empty()) return;
      if (da->requires_grad) {
        detail::ensure_g(*da);
        for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += dout->g[i];
      }
      if (db->requires_grad) {
        detail::ensure_g(*db);
        for (size_t i = 0; i < db->v.size(); ++i) db->g[i] -= dout->g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  detail::check_finite(a, "mul");
  detail::check_finite(b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    int ib = tape->assign_id(const_cast<Tensor<T>&>(b));
    auto da = a.impl(), db = b.impl(), dout = out.impl();
    tape->record(OpKind::Mul, {ia, ib}, out, [da, db, dout]() {
      if (dout->g.empty()) return;
      if (da->requires_grad) {
        detail::ensure_g(*da);
        for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += dout->g[i] * db->v[i];
      }
      if (db->requires_grad) {
        detail::ensure_g(*db);
        for (size_t i = 0; i < db->v.size(); ++i) db->g[i] += dout->g[i] * da->v[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T s) {
  detail::check_finite(a, "scale");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * s;
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::Scale, {ia}, out, [da, dout, s]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += dout->g[i] * s;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& a, T c) {
  detail::check_finite(a, "add_scalar");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::AddScalar, {ia}, out, [da, dout]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += dout->g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& a) {
  detail::check_finite(a, "tanh");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::tanh(pa[i]);
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::Tanh, {ia}, out, [da, dout]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      for (size_t i = 0; i < da->v.size(); ++i) {
        T y = dout->v[i];
        da->g[i] += dout->g[i] * (T(1) - y * y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& a) {
  detail::check_finite(a, "relu");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::Relu, {ia}, out, [da, dout]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      for (size_t i = 0; i < da->v.size(); ++i)
        if (da->v[i] > T(0)) da->g[i] += dout->g[i];
    });
  }
  return out;
}

// Subgradient 0 outside (0,1); exact boundary points use the interior
// derivative 1, so saturated pixels freeze but boundary ones keep moving.
template <typename T>
Tensor<T> clip01(Tape<T>* tape, const Tensor<T>& a) {
  detail::check_finite(a, "clip01");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::min(std::max(pa[i], T(0)), T(1));
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::Clip01, {ia}, out, [da, dout]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      for (size_t i = 0; i < da->v.size(); ++i)
        if (da->v[i] >= T(0) && da->v[i] <= T(1)) da->g[i] += dout->g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shape
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(Tape<T>* tape, const Tensor<T>& a) {
  T acc = T(0);
  const T* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::Sum, {ia}, out, [da, dout]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      T g = dout->g[0];
      for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                     " changes element count");
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), a.values());
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    int ia = tape->assign_id(const_cast<Tensor<T>&>(a));
    auto da = a.impl(), dout = out.impl();
    tape->record(OpKind::Reshape, {ia}, out, [da, dout]() {
      if (dout->g.empty() || !da->requires_grad) return;
      detail::ensure_g(*da);
      for (size_t i = 0; i < da->v.size(); ++i) da->g[i] += dout->g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: direct cross-correlation, NCHW input, OIkk kernels.
// The designated hot spot. Padding bounds are hoisted out of the inner loops
// so they vectorize; threading splits over independent output slices, which
// keeps every output element's accumulation order fixed (results do not
// depend on the thread count).
// ---------------------------------------------------------------------------

namespace detail {

// valid output range [lo, hi) with 0 <= o*stride - pad + koff < extent
inline void conv_span(int64_t extent, int64_t out_extent, int stride, int pad, int64_t koff,
                      int64_t* lo, int64_t* hi) {
  const int64_t shift = pad - koff;
  *lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const int64_t top = extent - 1 + shift;
  *hi = top < 0 ? 0 : std::min<int64_t>(out_extent, top / stride + 1);
  if (*hi < *lo) *hi = *lo;
}

// 8-lane dot product with a fixed reduction tree; the lane partition is an
// implementation constant, so results never depend on build or thread count.
template <typename T>
inline T dot_span(const T* a, const T* b, int64_t n) {
  T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  T acc = ((lane[0] + lane[4]) + (lane[1] + lane[5])) +
          ((lane[2] + lane[6]) + (lane[3] + lane[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernels,
                 const Tensor<T>& bias, int stride, int pad) {
  if (input.rank() != 4 || kernels.rank() != 4)
    throw ShapeError("conv2d: expects NCHW input and OIkk kernels");
  if (stride < 1) throw UsageError("conv2d: stride must be >= 1");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t O = kernels.dim(0), KC = kernels.dim(1), KH = kernels.dim(2), KW = kernels.dim(3);
  if (KC != C)
    throw ShapeError("conv2d: input channels " + std::to_string(C) + " vs kernel channels " +
                     std::to_string(KC));
  if (bias.numel() != O) throw ShapeError("conv2d: bias size must equal output channels");
  if (H + 2 * pad < KH || W + 2 * pad < KW)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int64_t OH = (H + 2 * pad - KH) / stride + 1;
  const int64_t OW = (W + 2 * pad - KW) / stride + 1;

  Tensor<T> out = Tensor<T>::zeros({N, O, OH, OW});
  const T* x = input.data();
  const T* k = kernels.data();
  const T* b = bias.data();
  T* y = out.data();

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      T* yplane = y + ((n * O + o) * OH) * OW;
      for (int64_t i = 0; i < OH * OW; ++i) yplane[i] = b[o];
      for (int64_t c = 0; c < C; ++c) {
        const T* xplane = x + ((n * C + c) * H) * W;
        const T* kbase = k + ((o * C + c) * KH) * KW;
        for (int64_t kh = 0; kh < KH; ++kh) {
          int64_t oh_lo, oh_hi;
          detail::conv_span(H, OH, stride, pad, kh, &oh_lo, &oh_hi);
          for (int64_t kw = 0; kw < KW; ++kw) {
            const T wgt = kbase[kh * KW + kw];
            int64_t ow_lo, ow_hi;
            detail::conv_span(W, OW, stride, pad, kw, &ow_lo, &ow_hi);
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const T* xrow = xplane + (oh * stride - pad + kh) * W - pad + kw;
              T* yrow = yplane + oh * OW;
              if (stride == 1) {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wgt * xrow[ow];
              } else {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wgt * xrow[ow * stride];
              }
            }
          }
        }
      }
    }
  }

  if (detail::track(tape, {&input, &kernels, &bias})) {
    out.set_requires_grad(true);
    int ii = tape->assign_id(const_cast<Tensor<T>&>(input));
    int ik = tape->assign_id(const_cast<Tensor<T>&>(kernels));
    int ib = tape->assign_id(const_cast<Tensor<T>&>(bias));
    auto dx = input.impl(), dk = kernels.impl(), db = bias.impl(), dout = out.impl();
    tape->record(OpKind::Conv2d, {ii, ik, ib}, out,
                 [dx, dk, db, dout, N, C, H, W, O, KH, KW, OH, OW, stride, pad]() {
      if (dout->g.empty()) return;
      const T* gy = dout->g.data();
      const T* xv = dx->v.data();
      const T* kv = dk->v.data();
      if (db->requires_grad) {
        detail::ensure_g(*db);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int64_t o = 0; o < O; ++o) {
          T acc = T(0);
          for (int64_t n = 0; n < N; ++n) {
            const T* gyplane = gy + ((n * O + o) * OH) * OW;
            for (int64_t i = 0; i < OH * OW; ++i) acc += gyplane[i];
          }
          db->g[o] += acc;
        }
      }
      if (dk->requires_grad) {
        detail::ensure_g(*dk);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int64_t o = 0; o < O; ++o)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t kh = 0; kh < KH; ++kh) {
              int64_t oh_lo, oh_hi;
              detail::conv_span(H, OH, stride, pad, kh, &oh_lo, &oh_hi);
              for (int64_t kw = 0; kw < KW; ++kw) {
                int64_t ow_lo, ow_hi;
                detail::conv_span(W, OW, stride, pad, kw, &ow_lo, &ow_hi);
                T acc = T(0);
                for (int64_t n = 0; n < N; ++n) {
                  const T* gyplane = gy + ((n * O + o) * OH) * OW;
                  const T* xplane = xv + ((n * C + c) * H) * W;
                  for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const T* xrow = xplane + (oh * stride - pad + kh) * W - pad + kw;
                    const T* gyrow = gyplane + oh * OW;
                    if (stride == 1) {
                      acc += detail::dot_span(gyrow + ow_lo, xrow + ow_lo, ow_hi - ow_lo);
                    } else {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                        acc += gyrow[ow] * xrow[ow * stride];
                    }
                  }
                }
                dk->g[((o * C + c) * KH + kh) * KW + kw] += acc;
              }
            }
      }
      if (dx->requires_grad) {
        detail::ensure_g(*dx);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) {
            const T* gyplane = gy + ((n * O + o) * OH) * OW;
            for (int64_t c = 0; c < C; ++c) {
              T* gxplane = dx->g.data() + ((n * C + c) * H) * W;
              const T* kbase = kv + ((o * C + c) * KH) * KW;
              for (int64_t kh = 0; kh < KH; ++kh) {
                int64_t oh_lo, oh_hi;
                detail::conv_span(H, OH, stride, pad, kh, &oh_lo, &oh_hi);
                for (int64_t kw = 0; kw < KW; ++kw) {
                  const T wgt = kbase[kh * KW + kw];
                  if (wgt == T(0)) continue;
                  int64_t ow_lo, ow_hi;
                  detail::conv_span(W, OW, stride, pad, kw, &ow_lo, &ow_hi);
                  for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    T* gxrow = gxplane + (oh * stride - pad + kh) * W - pad + kw;
                    const T* gyrow = gyplane + oh * OW;
                    if (stride == 1) {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) gxrow[ow] += wgt * gyrow[ow];
                    } else {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                        gxrow[ow * stride] += wgt * gyrow[ow];
                    }
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
// linear: out = x W + b, x is N x D, W is D x K.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  if (x.rank() != 2 || W.rank() != 2)
    throw ShapeError("linear: expects x NxD and W DxK, got " + shape_str(x.shape()) + " and " +
                     shape_str(W.shape()));
  const int64_t N = x.dim(0), D = x.dim(1), D2 = W.dim(0), K = W.dim(1);
  if (D != D2) throw ShapeError("linear: inner dims " + std::to_string(D) + " vs " + std::to_string(D2));
  if (b.numel() != K) throw ShapeError("linear: bias size must equal output dim");

  Tensor<T> out = Tensor<T>::zeros({N, K});
  const T* px = x.data();
  const T* pw = W.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t n = 0; n < N; ++n) {
    T* orow = po + n * K;
    for (int64_t kk = 0; kk < K; ++kk) orow[kk] = pb[kk];
    const T* xrow = px + n * D;
    for (int64_t d = 0; d < D; ++d) {
      const T xv = xrow[d];
      if (xv == T(0)) continue;
      const T* wrow = pw + d * K;
      for (int64_t kk = 0; kk < K; ++kk) orow[kk] += xv * wrow[kk];
    }
  }

  if (detail::track(tape, {&x, &W, &b})) {
    out.set_requires_grad(true);
    int ix = tape->assign_id(const_cast<Tensor<T>&>(x));
    int iw = tape->assign_id(const_cast<Tensor<T>&>(W));
    int ib = tape->assign_id(const_cast<Tensor<T>&>(b));
    auto dx = x.impl(), dw = W.impl(), db = b.impl(), dout = out.impl();
    tape->record(OpKind::Linear, {ix, iw, ib}, out, [dx, dw, db, dout, N, D, K]() {
      if (dout->g.empty()) return;
      const T* gy = dout->g.data();
      if (db->requires_grad) {
        detail::ensure_g(*db);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t kk = 0; kk < K; ++kk) db->g[kk] += gy[n * K + kk];
      }
      if (dw->requires_grad) {
        detail::ensure_g(*dw);
        for (int64_t n = 0; n < N; ++n) {
          const T* xrow = dx->v.data() + n * D;
          const T* gyrow = gy + n * K;
          for (int64_t d = 0; d < D; ++d) {
            const T xv = xrow[d];
            if (xv == T(0)) continue;
            T* gwrow = dw->g.data() + d * K;
            for (int64_t kk = 0; kk < K; ++kk) gwrow[kk] += xv * gyrow[kk];
          }
        }
      }
      if (dx->requires_grad) {
        detail::ensure_g(*dx);
        for (int64_t n = 0; n < N; ++n) {
          T* gxrow = dx->g.data() + n * D;
          const T* gyrow = gy + n * K;
          for (int64_t d = 0; d < D; ++d) {
            const T* wrow = dw->v.data() + d * K;
            T acc = T(0);
            for (int64_t kk = 0; kk < K; ++kk) acc += wrow[kk] * gyrow[kk];
            gxrow[d] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2x2 max-pool, stride 2. Ties resolve to the first element in scan order.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2(Tape<T>* tape, const Tensor<T>& input) {
  if (input.rank() != 4) throw ShapeError("max_pool2: expects NCHW input");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("max_pool2: spatial dims must be even");
  const int64_t OH = H / 2, OW = W / 2;

  Tensor<T> out = Tensor<T>::zeros({N, C, OH, OW});
  auto arg = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(N * C * OH * OW));
  const T* x = input.data();
  T* y = out.data();
  uint8_t* am = arg->data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* xplane = x + nc * H * W;
    T* yplane = y + nc * OH * OW;
    uint8_t* aplane = am + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        const int64_t base = (oh * 2) * W + ow * 2;
        T best = xplane[base];
        uint8_t bi = 0;
        const T cand1 = xplane[base + 1];
        if (cand1 > best) { best = cand1; bi = 1; }
        const T cand2 = xplane[base + W];
        if (cand2 > best) { best = cand2; bi = 2; }
        const T cand3 = xplane[base + W + 1];
        if (cand3 > best) { best = cand3; bi = 3; }
        yplane[oh * OW + ow] = best;
        aplane[oh * OW + ow] = bi;
      }
  }

  if (detail::track(tape, {&input})) {
    out.set_requires_grad(true);
    int ii = tape->assign_id(const_cast<Tensor<T>&>(input));
    auto dx = input.impl(), dout = out.impl();
    tape->record(OpKind::MaxPool2, {ii}, out, [dx, dout, arg, N, C, H, W, OH, OW]() {
      if (dout->g.empty() || !dx->requires_grad) return;
      detail::ensure_g(*dx);
      const T* gy = dout->g.data();
      const uint8_t* am = arg->data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T* gxplane = dx->g.data() + nc * H * W;
        const T* gyplane = gy + nc * OH * OW;
        const uint8_t* aplane = am + nc * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh)
          for (int64_t ow = 0; ow < OW; ++ow) {
            const uint8_t bi = aplane[oh * OW + ow];
            const int64_t base = (oh * 2) * W + ow * 2 + (bi & 1) + (bi >> 1) * W;
            gxplane[base] += gyplane[oh * OW + ow];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean softmax cross-entropy over the batch, stabilized by max-subtraction.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expects NxK logits");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (int lbl : labels)
    if (lbl < 0 || lbl >= K)
      throw LabelError("softmax_cross_entropy: label " + std::to_string(lbl) + " outside [0," +
                       std::to_string(K) + ")");

  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(N * K));
  const T* z = logits.data();
  T loss_acc = T(0);
  for (int64_t n = 0; n < N; ++n) {
    const T* row = z + n * K;
    T m = row[0];
    for (int64_t k = 1; k < K; ++k) m = std::max(m, row[k]);
    T denom = T(0);
    T* prow = probs->data() + n * K;
    for (int64_t k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - m);
      denom += prow[k];
    }
    for (int64_t k = 0; k < K; ++k) prow[k] /= denom;
    loss_acc += std::log(denom) - (row[labels[n]] - m);
  }
  Tensor<T> out = Tensor<T>::scalar(loss_acc / static_cast<T>(N));

  if (detail::track(tape, {&logits})) {
    out.set_requires_grad(true);
    int il = tape->assign_id(const_cast<Tensor<T>&>(logits));
    auto dl = logits.impl(), dout = out.impl();
    auto lbls = std::make_shared<std::vector<int>>(labels);
    tape->record(OpKind::SoftmaxCE, {il}, out, [dl, dout, probs, lbls, N, K]() {
      if (dout->g.empty() || !dl->requires_grad) return;
      detail::ensure_g(*dl);
      const T g = dout->g[0] / static_cast<T>(N);
      for (int64_t n = 0; n < N; ++n) {
        const T* prow = probs->data() + n * K;
        T* grow = dl->g.data() + n * K;
        const int y = (*lbls)[n];
        for (int64_t k = 0; k < K; ++k) grow[k] += g * (prow[k] - (k == y ? T(1) : T(0)));
      }
    });
  }
  return out;
}

}  // namespace gdpa
