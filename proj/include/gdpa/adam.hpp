#pragma once

#include <cmath>
#include <vector>

#include "gdpa/tensor.hpp"

namespace gdpa {

// Standard Adam with bias correction. Moment buffers are indexed parallel to
// the parameter list the state was initialized with.
template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step_count = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  static AdamState make(const ParamSet<T>& params, double lr) {
    AdamState st;
    st.lr = lr;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& [name, p] : params) {
      st.m.emplace_back(p.numel(), T(0));
      st.v.emplace_back(p.numel(), T(0));
    }
    return st;
  }
};

// One Adam update over the whole parameter set, in place. Parameters without
// an allocated gradient are treated as zero-gradient (their moments still
// decay). A non-finite gradient aborts before any parameter is touched.
// Gradient stores are cleared afterwards.
template <typename T>
void adam_step(AdamState<T>& st, ParamSet<T>& params) {
  if (st.m.size() != params.size())
    throw ShapeError("adam_step: state initialized for a different parameter set");
  if (st.lr <= 0) throw UsageError("adam_step: lr must be > 0");
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("adam_step: non-finite gradient in '" + name + "'");
  }

  st.step_count += 1;
  const double b1t = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double b2t = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second;
    if (st.m[i].size() != static_cast<size_t>(p.numel()))
      throw ShapeError("adam_step: moment shape mismatch for '" + params[i].first + "'");
    const bool has_g = p.has_grad();
    const T* g = has_g ? p.grad().data() : nullptr;
    T* w = p.data();
    T* mi = st.m[i].data();
    T* vi = st.v[i].data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = has_g ? static_cast<double>(g[j]) : 0.0;
      const double mj = st.beta1 * static_cast<double>(mi[j]) + (1.0 - st.beta1) * gj;
      const double vj = st.beta2 * static_cast<double>(vi[j]) + (1.0 - st.beta2) * gj * gj;
      mi[j] = static_cast<T>(mj);
      vi[j] = static_cast<T>(vj);
      const double mhat = mj / b1t;
      const double vhat = vj / b2t;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
  zero_grads(params);
}

}  // namespace gdpa
