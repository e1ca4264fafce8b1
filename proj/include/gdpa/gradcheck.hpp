#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gdpa/tape.hpp"
#include "gdpa/tensor.hpp"

namespace gdpa {

// A differentiable scalar-valued function of one tensor. The callable builds
// its graph on the provided tape (or runs untracked when the tape is null),
// so the same object yields both the analytic gradient and plain values for
// central differencing.
template <typename T>
using ScalarFn = std::function<Tensor<T>(Tape<T>*, const Tensor<T>&)>;

template <typename T>
inline T eval_scalar(const ScalarFn<T>& f, const Tensor<T>& x) {
  return f(nullptr, x).item();
}

// max over coordinates of |g_analytic - g_fd| / (|g_fd| + 1e-8), the relative
// disagreement between backward() and a central difference with step h.
// `coords` restricts the sweep to selected flat indices; empty means all.
// Two untracked evaluations must agree bit-exactly or the oracle refuses to
// certify the function (OracleError).
template <typename T>
double finite_diff_check(const ScalarFn<T>& f, Tensor<T>& x, double h,
                         const std::vector<int64_t>& coords = {}) {
  if (h <= 0) throw UsageError("finite_diff_check: h must be > 0");

  const T v1 = eval_scalar(f, x);
  const T v2 = eval_scalar(f, x);
  if (!(v1 == v2))
    throw OracleError("finite_diff_check: two identical evaluations differ; f is not deterministic");

  Tape<T> tape;
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> loss = f(&tape, x);
  tape.backward(loss);
  std::vector<T> analytic = x.grad();
  x.zero_grad();

  std::vector<int64_t> idx = coords;
  if (idx.empty()) {
    idx.resize(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) idx[static_cast<size_t>(i)] = i;
  }

  double worst = 0.0;
  for (int64_t i : idx) {
    const T orig = x.data()[i];
    x.data()[i] = orig + static_cast<T>(h);
    const double fp = static_cast<double>(eval_scalar(f, x));
    x.data()[i] = orig - static_cast<T>(h);
    const double fm = static_cast<double>(eval_scalar(f, x));
    x.data()[i] = orig;
    const double gfd = (fp - fm) / (2.0 * h);
    const double ga = static_cast<double>(analytic[static_cast<size_t>(i)]);
    const double rel = std::fabs(ga - gfd) / (std::fabs(gfd) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace gdpa
