#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gdpa/dataset.hpp"
#include "gdpa/generator.hpp"
#include "gdpa/gradcheck.hpp"

using namespace gdpa;

namespace {

GeneratorConfig desk_cfg(int pw = 7, int ph = 7) {
  GeneratorConfig cfg;
  cfg.patch_w = pw;
  cfg.patch_h = ph;
  return cfg;
}

template <typename T>
Tensor<T> random_batch(int n, Rng& rng, int size = 32) {
  Tensor<T> t = Tensor<T>::zeros({n, 3, size, size});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("encode determinism and feature dimension") {
  auto gen = build_generator<float>(desk_cfg(), 9);
  CHECK(gen.cfg.feature_dim() == 1024);  // 64 * 4 * 4 after three stride-2 layers

  Rng rng(4);
  Tensor<float> one = random_batch<float>(1, rng);
  Tensor<float> twice = Tensor<float>::zeros({2, 3, 32, 32});
  std::copy(one.data(), one.data() + one.numel(), twice.data());
  std::copy(one.data(), one.data() + one.numel(), twice.data() + one.numel());
  Tensor<float> feat = gen.encode(nullptr, twice);
  CHECK(feat.shape() == Shape{2, 1024});
  for (int i = 0; i < 1024; ++i) CHECK(feat.data()[i] == feat.data()[1024 + i]);

  Tensor<float> zero = Tensor<float>::zeros({1, 3, 32, 32});
  Tensor<float> zf = gen.encode(nullptr, zero);
  CHECK(zf.all_finite());

  Tensor<float> wrong = Tensor<float>::zeros({1, 3, 16, 16});
  CHECK_THROWS_AS(gen.encode(nullptr, wrong), ShapeError);
}

TEST_CASE("decode_location squashing") {
  auto gen = build_generator<float>(desk_cfg(), 1);
  Rng rng(8);
  Tensor<float> x = random_batch<float>(3, rng);
  Tensor<float> feat = gen.encode(nullptr, x);

  // zero-initialized head starts at the image center
  Tensor<float> l0 = gen.decode_location(nullptr, feat);
  for (int64_t i = 0; i < l0.numel(); ++i) CHECK(l0.data()[i] == 0.0f);

  // raw output equal to beta lands on tanh(1)
  gen.loc_b.data()[0] = 3000.0f;
  gen.loc_b.data()[1] = 3000.0f;
  Tensor<float> l1 = gen.decode_location(nullptr, feat);
  for (int64_t i = 0; i < l1.numel(); ++i)
    CHECK(l1.data()[i] == doctest::Approx(std::tanh(1.0)).epsilon(1e-6));

  // small beta saturates toward the corners
  auto gen1 = build_generator<float>(desk_cfg(), 1);
  gen1.cfg.beta = 1.0;
  gen1.loc_b.data()[0] = 10.0f;
  gen1.loc_b.data()[1] = -10.0f;
  Tensor<float> l2 = gen1.decode_location(nullptr, feat);
  CHECK(l2.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(l2.data()[1] == doctest::Approx(-1.0).epsilon(1e-6));
  for (int64_t i = 0; i < l2.numel(); ++i) {
    CHECK(l2.data()[i] >= -1.0f);
    CHECK(l2.data()[i] <= 1.0f);
  }
  // away from saturation the outputs stay strictly interior
  for (int64_t i = 0; i < l1.numel(); ++i) {
    CHECK(l1.data()[i] > -1.0f);
    CHECK(l1.data()[i] < 1.0f);
  }
}

TEST_CASE("decode_pattern range") {
  auto gen = build_generator<float>(desk_cfg(5, 5), 2);
  Rng rng(12);
  Tensor<float> feat = gen.encode(nullptr, random_batch<float>(2, rng));

  // zeroed head emits a uniform 0.5 pattern
  auto zeroed = build_generator<float>(desk_cfg(5, 5), 2);
  for (int64_t i = 0; i < zeroed.pat_w.numel(); ++i) zeroed.pat_w.data()[i] = 0.0f;
  Tensor<float> p0 = zeroed.decode_pattern(nullptr, feat);
  CHECK(p0.shape() == Shape{2, 3, 5, 5});
  for (int64_t i = 0; i < p0.numel(); ++i) CHECK(p0.data()[i] == 0.5f);

  // saturated raw outputs reach the [0,1] endpoints
  auto sat = build_generator<float>(desk_cfg(5, 5), 2);
  for (int64_t i = 0; i < sat.pat_b.numel(); ++i)
    sat.pat_b.data()[i] = (i % 2 == 0) ? 1e9f : -1e9f;
  for (int64_t i = 0; i < sat.pat_w.numel(); ++i) sat.pat_w.data()[i] = 0.0f;
  Tensor<float> p1 = sat.decode_pattern(nullptr, feat);
  for (int64_t i = 0; i < p1.numel(); ++i) {
    const int64_t k = i % (3 * 5 * 5);
    CHECK(p1.data()[i] == ((k % 2 == 0) ? 1.0f : 0.0f));
  }

  // random parameters keep values strictly inside (0,1)
  int64_t checked = 0;
  for (uint64_t seed = 100; seed < 104; ++seed) {
    auto g = build_generator<float>(desk_cfg(5, 5), seed);
    Rng r2(seed * 7 + 1);
    Tensor<float> f2 = g.encode(nullptr, random_batch<float>(4, r2));
    Tensor<float> pat = g.decode_pattern(nullptr, f2);
    for (int64_t i = 0; i < pat.numel(); ++i) {
      CHECK(pat.data()[i] > 0.0f);
      CHECK(pat.data()[i] < 1.0f);
      ++checked;
    }
  }
  CHECK(checked >= 1000);
}

TEST_CASE("gdpa_forward alpha=0 is a bitwise no-op") {
  auto gen = build_generator<float>(desk_cfg(10, 10), 3);
  Rng rng(21);
  Tensor<float> x = random_batch<float>(4, rng);
  Tape<float> tape;
  auto fwd = gdpa_forward(&tape, gen, x, 0.0, LocationMode::Dynamic);
  CHECK(fwd.x_adv.values() == x.values());

  CHECK_THROWS_AS(gdpa_forward<float>(nullptr, gen, x, 1.5, LocationMode::Dynamic), RangeError);
}

TEST_CASE("gdpa_forward alpha=1 static center replaces the window exactly") {
  auto gen = build_generator<float>(desk_cfg(6, 6), 5);
  Rng rng(23);
  Tensor<float> x = random_batch<float>(2, rng);
  auto fwd = gdpa_forward<float>(nullptr, gen, x, 1.0, LocationMode::Static, 0.0, 0.0);
  const int top = (32 - 6) / 2, left = (32 - 6) / 2;
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
          const float got = fwd.x_adv.data()[((n * 3 + ch) * 32 + r) * 32 + c];
          const bool inside = r >= top && r < top + 6 && c >= left && c < left + 6;
          if (inside) {
            const float pat =
                fwd.pattern.data()[((n * 3 + ch) * 6 + (r - top)) * 6 + (c - left)];
            CHECK(got == pat);
          } else {
            CHECK(got == x.data()[((n * 3 + ch) * 32 + r) * 32 + c]);
          }
        }
}

TEST_CASE("gdpa_forward deviation bound and untouched exterior") {
  Rng rng(31);
  Rng loc_rng(77);
  int64_t draws = 0;
  for (uint64_t seed = 50; seed < 54; ++seed) {
    auto gen = build_generator<float>(desk_cfg(8, 8), seed);
    const double alpha = rng.uniform(0.1, 1.0);
    Tensor<float> x = random_batch<float>(4, rng);
    auto fwd = gdpa_forward<float>(nullptr, gen, x, alpha, LocationMode::Random, 0, 0, &loc_rng);
    for (int64_t i = 0; i < x.numel(); ++i) {
      const float dv = std::fabs(fwd.x_adv.data()[i] - x.data()[i]);
      CHECK(dv <= static_cast<float>(alpha));
      ++draws;
    }
    // pixels strictly outside the shifted window plus a one-pixel halo are
    // untouched bit-exactly
    for (int n = 0; n < 4; ++n) {
      const float dx = 16.0f * fwd.loc.data()[n * 2 + 0];
      const float dy = 16.0f * fwd.loc.data()[n * 2 + 1];
      const double left = (32 - 8) / 2 - dx - 1, right = left + 8 + 2;
      const double top = (32 - 8) / 2 - dy - 1, bottom = top + 8 + 2;
      for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < 32; ++r)
          for (int c = 0; c < 32; ++c) {
            if (r > top - 1 && r < bottom + 1 && c > left - 1 && c < right + 1) continue;
            const int64_t at = ((static_cast<int64_t>(n) * 3 + ch) * 32 + r) * 32 + c;
            CHECK(fwd.x_adv.data()[at] == x.data()[at]);
          }
    }
  }
  CHECK(draws >= 1000);
}

TEST_CASE("monotone visibility") {
  auto gen = build_generator<float>(desk_cfg(8, 8), 7);
  Rng rng(41);
  Tensor<float> x = random_batch<float>(3, rng);
  double prev = -1.0;
  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    auto fwd = gdpa_forward<float>(nullptr, gen, x, alpha, LocationMode::Static, 0.21, -0.13);
    double l1 = 0;
    for (int64_t i = 0; i < x.numel(); ++i)
      l1 += std::fabs(static_cast<double>(fwd.x_adv.data()[i]) - x.data()[i]);
    CHECK(l1 >= prev - 1e-4);
    prev = l1;
  }
}

TEST_CASE("location gradients flow only in dynamic mode") {
  Rng rng(51);
  Tensor<float> x = random_batch<float>(2, rng);
  std::vector<int> labels = {1, 3};

  auto grad_mass = [&](LocationMode mode) {
    auto gen = build_generator<float>(desk_cfg(8, 8), 13);
    // move off the exact-integer displacement so the location derivative is
    // two-sided
    gen.loc_b.data()[0] = 900.0f;
    gen.loc_b.data()[1] = -700.0f;
    Rng lrng(5);
    Tape<float> tape;
    auto fwd = gdpa_forward(&tape, gen, x, 1.0, mode, 0.3, 0.1, &lrng);
    Tensor<float> loss = reduce_sum(&tape, mul(&tape, fwd.x_adv, fwd.x_adv));
    tape.backward(loss);
    double lw = 0;
    if (gen.loc_w.has_grad())
      for (float g : gen.loc_w.grad()) lw += std::fabs(g);
    double pw = 0;
    if (gen.pat_w.has_grad())
      for (float g : gen.pat_w.grad()) pw += std::fabs(g);
    return std::pair<double, double>(lw, pw);
  };

  auto [dyn_loc, dyn_pat] = grad_mass(LocationMode::Dynamic);
  CHECK(dyn_loc > 0.0);
  CHECK(dyn_pat > 0.0);
  auto [sta_loc, sta_pat] = grad_mass(LocationMode::Static);
  CHECK(sta_loc == 0.0);
  CHECK(sta_pat > 0.0);
  auto [rnd_loc, rnd_pat] = grad_mass(LocationMode::Random);
  CHECK(rnd_loc == 0.0);
  CHECK(rnd_pat > 0.0);
}

TEST_CASE("full pipeline location-head gradient matches finite differences") {
  // the hardest path: loss -> injection -> translation -> tanh head, probed
  // at the location-head bias with a position-sensitive loss
  Rng rng(61);
  Tensor<double> x = Tensor<double>::zeros({2, 3, 32, 32});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform();
  auto gen = build_generator<double>(desk_cfg(8, 8), 17);
  gen.cfg.beta = 30.0;         // keep the head slope meaningful for the probe
  gen.loc_b.data()[0] = 9.3;   // non-integer pixel displacement
  gen.loc_b.data()[1] = -6.7;

  Tensor<double> ramp = Tensor<double>::zeros({2, 3, 32, 32});
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
          ramp.data()[((n * 3 + ch) * 32 + r) * 32 + c] = (c + 0.5 * r) / 32.0;

  ScalarFn<double> f = [&](Tape<double>* t, const Tensor<double>& bias) {
    Generator<double> g = gen;
    g.loc_b = const_cast<Tensor<double>&>(bias);
    auto fwd = gdpa_forward(t, g, x, 0.9, LocationMode::Dynamic);
    return reduce_sum(t, mul(t, fwd.x_adv, ramp));
  };
  Tensor<double> bias = gen.loc_b.clone();
  bias.set_requires_grad(true);
  CHECK(finite_diff_check(f, bias, 1e-5) <= 1e-4);
}
