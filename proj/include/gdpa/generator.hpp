#pragma once

#include <array>
#include <string>

#include "gdpa/ops.hpp"
#include "gdpa/rng.hpp"
#include "gdpa/sampler.hpp"

// The attack generator G = (G_E, G_L, G_P): a small strided conv encoder, a
// location head squashed by a slope-controlled tanh, and a pattern head
// mapped into (0,1). gdpa_forward composes them with the sampler into the
// per-image adversarial example.

namespace gdpa {

enum class PatternSource {
  PatchHead,  // head emits a patch-sized pattern, translated into place
  FullImage,  // head emits a full-size image directly; only the mask moves
};

enum class LocationMode { Dynamic, Static, Random };

struct GeneratorConfig {
  int channels = 3;
  int image_h = 32;
  int image_w = 32;
  int patch_h = 0;
  int patch_w = 0;
  double beta = 3000.0;
  PatternSource pattern_source = PatternSource::PatchHead;
  GridScale grid_scale = GridScale::ImageExtent;
  std::array<int, 3> widths = {16, 32, 64};

  void validate() const {
    if (beta <= 0) throw RangeError("generator: beta must be > 0");
    if (patch_h <= 0 || patch_w <= 0 || patch_h > image_h || patch_w > image_w)
      throw ShapeError("generator: patch dims must be positive and fit the image");
  }

  // three stride-2 k=4 pad-1 layers halve each spatial dim
  int feature_dim() const {
    return widths[2] * (image_h / 8) * (image_w / 8);
  }
  int pattern_h() const { return pattern_source == PatternSource::PatchHead ? patch_h : image_h; }
  int pattern_w() const { return pattern_source == PatternSource::PatchHead ? patch_w : image_w; }
  int pattern_dim() const { return channels * pattern_h() * pattern_w(); }
};

template <typename T>
struct Generator {
  GeneratorConfig cfg;
  std::array<Tensor<T>, 3> conv_w;
  std::array<Tensor<T>, 3> conv_b;
  Tensor<T> loc_w, loc_b;  // feature_dim -> 2
  Tensor<T> pat_w, pat_b;  // feature_dim -> pattern_dim
  mutable uint64_t forward_images = 0;

  ParamSet<T> params() {
    ParamSet<T> ps;
    for (int i = 0; i < 3; ++i) {
      ps.push_back({"enc.conv" + std::to_string(i) + ".w", conv_w[i]});
      ps.push_back({"enc.conv" + std::to_string(i) + ".b", conv_b[i]});
    }
    ps.push_back({"loc.w", loc_w});
    ps.push_back({"loc.b", loc_b});
    ps.push_back({"pat.w", pat_w});
    ps.push_back({"pat.b", pat_b});
    return ps;
  }

  // Flattened encoder features, one row per image.
  Tensor<T> encode(Tape<T>* tape, const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.image_h ||
        x.dim(3) != cfg.image_w)
      throw ShapeError("encode: expected NCHW " + std::to_string(cfg.channels) + "x" +
                       std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) +
                       ", got " + shape_str(x.shape()));
    Tensor<T> h = x;
    for (int i = 0; i < 3; ++i) h = relu(tape, conv2d(tape, h, conv_w[i], conv_b[i], 2, 1));
    return reshape(tape, h, {x.dim(0), static_cast<int64_t>(cfg.feature_dim())});
  }

  // l = tanh(head(feat) / beta), strictly inside (-1,1) for finite inputs.
  Tensor<T> decode_location(Tape<T>* tape, const Tensor<T>& feat) const {
    Tensor<T> raw = linear(tape, feat, loc_w, loc_b);
    return tanh(tape, scale(tape, raw, static_cast<T>(1.0 / cfg.beta)));
  }

  // pattern = 0.5*tanh(head(feat)) + 0.5, reshaped channels-first.
  Tensor<T> decode_pattern(Tape<T>* tape, const Tensor<T>& feat) const {
    Tensor<T> raw = linear(tape, feat, pat_w, pat_b);
    Tensor<T> pat = add_scalar(tape, scale(tape, tanh(tape, raw), T(0.5)), T(0.5));
    return reshape(tape, pat,
                   {feat.dim(0), static_cast<int64_t>(cfg.channels),
                    static_cast<int64_t>(cfg.pattern_h()), static_cast<int64_t>(cfg.pattern_w())});
  }
};

template <typename T>
Generator<T> build_generator(const GeneratorConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (cfg.image_h % 8 != 0 || cfg.image_w % 8 != 0)
    throw ShapeError("generator: encoder needs image dims divisible by 8");
  Generator<T> g;
  g.cfg = cfg;
  Rng rng(seed);
  int in_c = cfg.channels;
  for (int i = 0; i < 3; ++i) {
    const int out_c = cfg.widths[static_cast<size_t>(i)];
    const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * 4 * 4));
    g.conv_w[i] = Tensor<T>::uniform({out_c, in_c, 4, 4}, static_cast<T>(bound), rng);
    g.conv_b[i] = Tensor<T>::zeros({out_c});
    in_c = out_c;
  }
  const int fd = cfg.feature_dim();
  const double fb = std::sqrt(6.0 / static_cast<double>(fd));
  // zero-initialized location head: training starts from the image center
  g.loc_w = Tensor<T>::zeros({fd, 2});
  g.loc_b = Tensor<T>::zeros({2});
  g.pat_w = Tensor<T>::uniform({fd, cfg.pattern_dim()}, static_cast<T>(fb), rng);
  g.pat_b = Tensor<T>::zeros({cfg.pattern_dim()});
  for (auto& [name, p] : g.params()) p.set_requires_grad(true);
  return g;
}

template <typename T>
struct GdpaForward {
  Tensor<T> x_adv;    // N,C,H,W
  Tensor<T> loc;      // N,2
  Tensor<T> pattern;  // N,C,ph,pw
  Tensor<T> mask;     // N,1,H,W
};

// The full adversarial-example forward pass:
//   m = alpha * Translate(m_center, l),  p = Translate(p_center, l),
//   x_adv = (1-m) (.) x + m (.) p
// Location comes from the head (dynamic), a constant (static) or a fresh
// per-image uniform draw (random); gradients reach the location head only in
// dynamic mode.
template <typename T>
GdpaForward<T> gdpa_forward(Tape<T>* tape, const Generator<T>& gen, const Tensor<T>& x,
                            double alpha, LocationMode mode, double static_lx = 0.0,
                            double static_ly = 0.0, Rng* loc_rng = nullptr) {
  if (alpha < 0.0 || alpha > 1.0) throw RangeError("gdpa_forward: alpha must be in [0,1]");
  const int64_t N = x.dim(0);
  const GeneratorConfig& cfg = gen.cfg;

  Tensor<T> feat = gen.encode(tape, x);

  Tensor<T> loc;
  switch (mode) {
    case LocationMode::Dynamic:
      loc = gen.decode_location(tape, feat);
      break;
    case LocationMode::Static: {
      if (static_lx < -1 || static_lx > 1 || static_ly < -1 || static_ly > 1)
        throw RangeError("gdpa_forward: static location outside [-1,1]");
      loc = Tensor<T>::zeros({N, 2});
      for (int64_t n = 0; n < N; ++n) {
        loc.data()[n * 2 + 0] = static_cast<T>(static_lx);
        loc.data()[n * 2 + 1] = static_cast<T>(static_ly);
      }
      break;
    }
    case LocationMode::Random: {
      if (!loc_rng) throw UsageError("gdpa_forward: random location mode needs an rng");
      loc = Tensor<T>::zeros({N, 2});
      for (int64_t i = 0; i < N * 2; ++i) loc.data()[i] = static_cast<T>(loc_rng->uniform(-1, 1));
      break;
    }
  }

  Tensor<T> pattern = gen.decode_pattern(tape, feat);

  PatchPlacement pl;
  pl.alpha = alpha;
  pl.patch_w = cfg.patch_w;
  pl.patch_h = cfg.patch_h;
  pl.image_w = cfg.image_w;
  pl.image_h = cfg.image_h;
  const T sx = static_cast<T>(grid_scale_x(pl, cfg.grid_scale));
  const T sy = static_cast<T>(grid_scale_y(pl, cfg.grid_scale));

  // shared center mask replicated over the batch (constant, no gradient)
  Tensor<T> mc = make_center_mask<T>(pl);
  Tensor<T> mc_batch = Tensor<T>::zeros({N, 1, cfg.image_h, cfg.image_w});
  for (int64_t n = 0; n < N; ++n)
    std::copy(mc.data(), mc.data() + mc.numel(), mc_batch.data() + n * mc.numel());

  Tensor<T> m = scale(tape, translate(tape, mc_batch, loc, sx, sy), static_cast<T>(alpha));

  Tensor<T> p;
  if (cfg.pattern_source == PatternSource::PatchHead) {
    Tensor<T> pc = pad_center(tape, pattern, cfg.image_h, cfg.image_w);
    p = translate(tape, pc, loc, sx, sy);
  } else {
    p = pattern;  // generated at full size; only the mask is translated
  }

  GdpaForward<T> out;
  out.x_adv = inject(tape, x, m, p);
  out.loc = loc;
  out.pattern = pattern;
  out.mask = m;
  gen.forward_images += static_cast<uint64_t>(N);
  return out;
}

}  // namespace gdpa
