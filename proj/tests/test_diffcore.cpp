#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gdpa/adam.hpp"
#include "gdpa/gradcheck.hpp"
#include "gdpa/ops.hpp"
#include "gdpa/rng.hpp"
#include "gdpa/tape.hpp"

using namespace gdpa;

namespace {

// Random values away from the relu/clip kinks at 0 and 1.
template <typename T>
Tensor<T> nudged_uniform(Shape shape, Rng& rng, double margin = 1e-2) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(-2.0, 2.0);
    for (double kink : {0.0, 1.0})
      if (std::fabs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin) * 2.0;
    t.data()[i] = static_cast<T>(v);
  }
  return t;
}

}  // namespace

TEST_CASE("elementwise basics") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::scalar(0.0);
  x.set_requires_grad(true);
  Tensor<double> y = tanh(&tape, x);
  CHECK(y.item() == 0.0);
  tape.backward(y);
  CHECK(x.grad()[0] == 1.0);

  Tensor<double> a = Tensor<double>::from({3}, {0.25, -1.5, 3.0});
  Tensor<double> z = Tensor<double>::zeros({3});
  Tensor<double> s = add<double>(nullptr, a, z);
  for (int i = 0; i < 3; ++i) CHECK(s.data()[i] == a.data()[i]);
}

TEST_CASE("tanh gradient matches central difference") {
  Tensor<double> x = Tensor<double>::scalar(0.5);
  ScalarFn<double> f = [](Tape<double>* t, const Tensor<double>& in) {
    return reduce_sum(t, tanh(t, in));
  };
  CHECK(finite_diff_check(f, x, 1e-4) <= 1e-6);
}

TEST_CASE("elementwise shape and numeric errors") {
  Tensor<float> a = Tensor<float>::zeros({2, 2});
  Tensor<float> b = Tensor<float>::zeros({2, 3});
  CHECK_THROWS_AS(add<float>(nullptr, a, b), ShapeError);
  Tensor<float> bad = Tensor<float>::from({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(tanh<float>(nullptr, bad), NumericError);
}

TEST_CASE("conv2d identity and hand values") {
  // 1x1 identity kernel reproduces the input.
  Rng rng(3);
  Tensor<double> x = Tensor<double>::uniform({1, 1, 4, 4}, 1.0, rng);
  Tensor<double> k = Tensor<double>::from({1, 1, 1, 1}, {1.0});
  Tensor<double> b = Tensor<double>::zeros({1});
  Tensor<double> y = conv2d<double>(nullptr, x, k, b, 1, 0);
  CHECK(y.same_shape(x));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  // all-ones 2x2 kernel over a 2x2 ones image sums four ones.
  Tensor<double> ones = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tensor<double> k2 = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tensor<double> y2 = conv2d<double>(nullptr, ones, k2, b, 1, 0);
  CHECK(y2.numel() == 1);
  CHECK(y2.item() == 4.0);
}

TEST_CASE("conv2d gradients vs finite differences") {
  Rng rng(11);
  Tensor<double> x = Tensor<double>::uniform({1, 2, 5, 5}, 1.0, rng);
  Tensor<double> k = Tensor<double>::uniform({3, 2, 4, 4}, 0.5, rng);
  Tensor<double> b = Tensor<double>::uniform({3}, 0.5, rng);

  auto loss_wrt = [&](Tensor<double>& probe, int role) {
    return ScalarFn<double>([&, role](Tape<double>* t, const Tensor<double>& in) {
      const Tensor<double>& xi = role == 0 ? in : x;
      const Tensor<double>& ki = role == 1 ? in : k;
      const Tensor<double>& bi = role == 2 ? in : b;
      // square the output so kernel/bias gradients are input-dependent
      Tensor<double> y = conv2d(t, xi, ki, bi, 2, 0);
      return reduce_sum(t, mul(t, y, y));
    });
  };
  CHECK(finite_diff_check(loss_wrt(x, 0), x, 1e-5) <= 1e-4);
  CHECK(finite_diff_check(loss_wrt(k, 1), k, 1e-5) <= 1e-4);
  CHECK(finite_diff_check(loss_wrt(b, 2), b, 1e-5) <= 1e-4);

  Tensor<double> kbad = Tensor<double>::uniform({3, 4, 2, 2}, 0.5, rng);
  CHECK_THROWS_AS(conv2d<double>(nullptr, x, kbad, b, 1, 0), ShapeError);
}

TEST_CASE("linear identity, hand sum, gradients") {
  Tensor<double> x = Tensor<double>::from({1, 2}, {1.0, 2.0});
  Tensor<double> wid = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  Tensor<double> b0 = Tensor<double>::zeros({2});
  Tensor<double> y = linear<double>(nullptr, x, wid, b0);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 2.0);

  Tensor<double> w1 = Tensor<double>::from({2, 1}, {1.0, 1.0});
  Tensor<double> bh = Tensor<double>::from({1}, {0.5});
  CHECK(linear<double>(nullptr, x, w1, bh).item() == 3.5);

  Rng rng(5);
  Tensor<double> xr = Tensor<double>::uniform({3, 4}, 1.0, rng);
  Tensor<double> wr = Tensor<double>::uniform({4, 2}, 1.0, rng);
  Tensor<double> br = Tensor<double>::uniform({2}, 1.0, rng);
  auto f = [&](int role, Tensor<double>& probe) {
    return ScalarFn<double>([&, role](Tape<double>* t, const Tensor<double>& in) {
      Tensor<double> y = linear(t, role == 0 ? in : xr, role == 1 ? in : wr, role == 2 ? in : br);
      return reduce_sum(t, mul(t, y, y));
    });
  };
  CHECK(finite_diff_check(f(0, xr), xr, 1e-5) <= 1e-4);
  CHECK(finite_diff_check(f(1, wr), wr, 1e-5) <= 1e-4);
  CHECK(finite_diff_check(f(2, br), br, 1e-5) <= 1e-4);

  Tensor<double> wbad = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(linear<double>(nullptr, xr, wbad, br), ShapeError);
}

TEST_CASE("softmax cross-entropy values and gradient") {
  Tensor<double> uniform_logits = Tensor<double>::zeros({1, 10});
  Tensor<double> l1 = softmax_cross_entropy<double>(nullptr, uniform_logits, {3});
  CHECK(l1.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Tensor<double> hot = Tensor<double>::zeros({1, 4});
  hot.data()[2] = 1e6;
  Tensor<double> l2 = softmax_cross_entropy<double>(nullptr, hot, {2});
  CHECK(l2.item() == doctest::Approx(0.0).epsilon(1e-9));

  Rng rng(17);
  Tensor<double> logits = Tensor<double>::uniform({4, 6}, 2.0, rng);
  std::vector<int> labels = {1, 5, 0, 3};
  ScalarFn<double> f = [&](Tape<double>* t, const Tensor<double>& in) {
    return softmax_cross_entropy(t, in, labels);
  };
  CHECK(finite_diff_check(f, logits, 1e-5) <= 1e-5);

  CHECK_THROWS_AS(softmax_cross_entropy<double>(nullptr, logits, {1, 5, 0, 6}), LabelError);
}

TEST_CASE("maxpool forward and gradient") {
  Tensor<double> x =
      Tensor<double>::from({1, 1, 2, 4}, {1.0, 2.0, 5.0, 3.0, 0.5, -1.0, 4.0, 6.0});
  Tensor<double> y = max_pool2<double>(nullptr, x);
  CHECK(y.data()[0] == 2.0);
  CHECK(y.data()[1] == 6.0);

  Rng rng(23);
  Tensor<double> xr = nudged_uniform<double>({2, 3, 4, 4}, rng);
  ScalarFn<double> f = [](Tape<double>* t, const Tensor<double>& in) {
    Tensor<double> y = max_pool2(t, in);
    return reduce_sum(t, mul(t, y, y));
  };
  CHECK(finite_diff_check(f, xr, 1e-6) <= 1e-4);
}

TEST_CASE("backward basics") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({4}, {0.3, -0.7, 2.0, 1.1});
  x.set_requires_grad(true);
  Tensor<double> loss = reduce_sum(&tape, x);
  tape.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 1.0);

  Tape<double> tape2;
  Tensor<double> x2 = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  x2.set_requires_grad(true);
  Tensor<double> loss2 = reduce_sum(&tape2, mul(&tape2, x2, x2));
  tape2.backward(loss2);
  CHECK(x2.grad()[0] == 2.0);
  CHECK(x2.grad()[1] == 4.0);
  CHECK(x2.grad()[2] == 6.0);

  Tensor<double> nonscalar = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(tape2.backward(nonscalar), UsageError);
}

TEST_CASE("backward accumulation is additive and linear") {
  auto grads_of = [](bool joint) {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::from({3}, {0.4, -0.2, 1.3});
    x.set_requires_grad(true);
    Tensor<double> l1 = reduce_sum(&tape, mul(&tape, x, x));
    Tensor<double> l2 = reduce_sum(&tape, tanh(&tape, x));
    if (joint) {
      Tensor<double> both = add(&tape, l1, l2);
      tape.backward(both);
    } else {
      tape.backward(l1);
      tape.backward(l2);
    }
    return x.grad();
  };
  auto joint = grads_of(true);
  auto split = grads_of(false);
  for (int i = 0; i < 3; ++i) CHECK(joint[i] == doctest::Approx(split[i]).epsilon(1e-14));

  // repeated backward without reset doubles leaf gradients
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tensor<double> loss = reduce_sum(&tape, mul(&tape, x, x));
  tape.backward(loss);
  auto once = x.grad();
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0 * once[0]);
  CHECK(x.grad()[1] == 2.0 * once[1]);
}

TEST_CASE("tape replay is bit-identical") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor<float> x = nudged_uniform<float>({2, 3, 8, 8}, rng);
    Tensor<float> k = Tensor<float>::uniform({4, 3, 3, 3}, 0.4f, rng);
    Tensor<float> b = Tensor<float>::uniform({4}, 0.1f, rng);
    x.set_requires_grad(true);
    k.set_requires_grad(true);
    Tape<float> tape;
    Tensor<float> y = relu(&tape, conv2d(&tape, x, k, b, 1, 1));
    Tensor<float> loss = reduce_sum(&tape, mul(&tape, y, y));
    tape.backward(loss);
    std::vector<float> out = {loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    return out;
  };
  auto a = run(77);
  auto b = run(77);
  CHECK(a == b);
}

TEST_CASE("registered op audit: analytic gradients match finite differences") {
  // 10 seeds per op; f64 at 1e-4 and f32 at 1e-3, sampled away from kinks.
  // Probe losses are built so per-coordinate gradients stay bounded away
  // from zero wherever the op is smooth; central differencing is meaningless
  // at vanishing gradients.
  auto audit = [](auto tag, double h, double tol) {
    using T = decltype(tag);
    struct OpCase {
      std::string name;
      ScalarFn<T> fn;
    };
    Tensor<T> rhs;  // positive second operand, in [0.5, 1.5]
    std::vector<OpCase> cases = {
        {"add", [&rhs](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, add(t, x, rhs), rhs));
         }},
        {"sub", [&rhs](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, sub(t, x, rhs), rhs));
         }},
        {"mul", [&rhs](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, mul(t, x, rhs), x));
         }},
        {"scale", [](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, scale(t, x, T(1.7)), x));
         }},
        {"add_scalar", [&rhs](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, add_scalar(t, x, T(0.3)), rhs));
         }},
        {"tanh", [](Tape<T>* t, const Tensor<T>& x) { return reduce_sum(t, tanh(t, x)); }},
        {"relu", [&rhs](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, relu(t, x), rhs));
         }},
        {"clip01", [&rhs](Tape<T>* t, const Tensor<T>& x) {
           return reduce_sum(t, mul(t, clip01(t, x), rhs));
         }},
        {"sum", [](Tape<T>* t, const Tensor<T>& x) { return reduce_sum(t, x); }},
        {"reshape", [](Tape<T>* t, const Tensor<T>& x) {
           Tensor<T> y = reshape(t, x, {x.numel()});
           return reduce_sum(t, mul(t, y, y));
         }},
    };
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed);
      // values in [-1.5, 1.5], at least 0.3 away from the kinks at 0 and 1
      Tensor<T> x = Tensor<T>::zeros({2, 5});
      for (int64_t i = 0; i < x.numel(); ++i) {
        double v = rng.uniform(-1.5, 1.5);
        for (double kink : {0.0, 1.0})
          if (std::fabs(v - kink) < 0.3) v = kink + (v >= kink ? 0.3 : -0.3);
        x.data()[i] = static_cast<T>(v);
      }
      rhs = Tensor<T>::zeros({2, 5});
      for (int64_t i = 0; i < rhs.numel(); ++i)
        rhs.data()[i] = static_cast<T>(rng.uniform(0.5, 1.5));
      for (auto& c : cases) {
        double err = finite_diff_check(c.fn, x, h);
        INFO(c.name, " seed ", seed, " err ", err);
        CHECK(err <= tol);
      }
    }
  };
  audit(double{}, 1e-5, 1e-4);
  audit(float{}, 2e-2, 1e-3);
}

TEST_CASE("adam steps") {
  // zero gradient leaves parameters untouched
  ParamSet<float> params;
  Tensor<float> w = Tensor<float>::from({2}, {1.5f, -0.5f});
  w.set_requires_grad(true);
  params.push_back({"w", w});
  auto st = AdamState<float>::make(params, 0.1);
  w.zero_grad();
  adam_step(st, params);
  CHECK(w.data()[0] == 1.5f);
  CHECK(w.data()[1] == -0.5f);

  // first step with unit gradient moves by -lr/(1+eps)
  ParamSet<double> p2;
  Tensor<double> w2 = Tensor<double>::scalar(0.7);
  w2.set_requires_grad(true);
  p2.push_back({"w", w2});
  auto st2 = AdamState<double>::make(p2, 0.1);
  w2.grad()[0] = 1.0;
  adam_step(st2, p2);
  CHECK(w2.item() == doctest::Approx(0.7 - 0.1 / (1.0 + 1e-8)).epsilon(1e-9));
  CHECK(st2.step_count == 1);
  CHECK((!w2.has_grad() || w2.grad()[0] == 0.0));

  // 200 steps on (w-3)^2 converge
  ParamSet<double> p3;
  Tensor<double> w3 = Tensor<double>::scalar(0.0);
  w3.set_requires_grad(true);
  p3.push_back({"w", w3});
  auto st3 = AdamState<double>::make(p3, 0.05);
  for (int i = 0; i < 200; ++i) {
    w3.ensure_grad();
    w3.grad()[0] = 2.0 * (w3.item() - 3.0);
    adam_step(st3, p3);
  }
  CHECK(std::fabs(w3.item() - 3.0) < 1e-2);

  // NaN gradient aborts without touching the parameter
  ParamSet<double> p4;
  Tensor<double> w4 = Tensor<double>::scalar(2.0);
  w4.set_requires_grad(true);
  p4.push_back({"w", w4});
  auto st4 = AdamState<double>::make(p4, 0.1);
  w4.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(st4, p4), NumericError);
  CHECK(w4.item() == 2.0);
  CHECK(st4.step_count == 0);
}

TEST_CASE("finite_diff_check oracle") {
  Rng rng(31);
  Tensor<double> x = Tensor<double>::uniform({6}, 1.0, rng);
  ScalarFn<double> fsum = [](Tape<double>* t, const Tensor<double>& in) {
    return reduce_sum(t, in);
  };
  CHECK(finite_diff_check(fsum, x, 1e-4) <= 1e-10);

  ScalarFn<double> ftanh = [](Tape<double>* t, const Tensor<double>& in) {
    return reduce_sum(t, tanh(t, in));
  };
  CHECK(finite_diff_check(ftanh, x, 1e-4) <= 1e-7);

  // a non-deterministic function is rejected
  int calls = 0;
  ScalarFn<double> flaky = [&calls](Tape<double>* t, const Tensor<double>& in) {
    ++calls;
    return add_scalar(t, reduce_sum(t, in), static_cast<double>(calls));
  };
  CHECK_THROWS_AS(finite_diff_check(flaky, x, 1e-4), OracleError);
}
