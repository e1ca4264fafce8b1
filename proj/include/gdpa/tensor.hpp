#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gdpa/errors.hpp"
#include "gdpa/rng.hpp"

namespace gdpa {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> v;  // contiguous values, row-major
  std::vector<T> g;  // gradient store; empty until needed
  bool requires_grad = false;
  int node_id = -1;  // id assigned by the tape op that produced this tensor
};

// Shared-handle tensor. Copies are shallow; ops never mutate values after
// creation, only the gradient store accumulates.
template <typename T>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<T>>()) {}
  explicit Tensor(std::shared_ptr<TensorData<T>> d) : d_(std::move(d)) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->v.assign(shape_numel(t.d_->shape), T(0));
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->v.assign(shape_numel(t.d_->shape), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("tensor init: " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->v = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  // Uniform in [-bound, bound].
  static Tensor uniform(Shape shape, T bound, Rng& rng) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.d_->v) x = static_cast<T>(rng.uniform(-double(bound), double(bound)));
    return t;
  }

  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }
  int64_t dim(size_t i) const { return d_->shape.at(i); }
  size_t rank() const { return d_->shape.size(); }

  T* data() { return d_->v.data(); }
  const T* data() const { return d_->v.data(); }
  std::vector<T>& values() { return d_->v; }
  const std::vector<T>& values() const { return d_->v; }

  T item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->v[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->g.empty(); }
  std::vector<T>& grad() {
    ensure_grad();
    return d_->g;
  }
  const std::vector<T>& grad() const { return d_->g; }
  void ensure_grad() {
    if (d_->g.empty()) d_->g.assign(d_->v.size(), T(0));
  }
  void zero_grad() {
    if (!d_->g.empty()) d_->g.assign(d_->v.size(), T(0));
  }
  void drop_grad() { d_->g.clear(); }

  int node_id() const { return d_->node_id; }
  void set_node_id(int id) { d_->node_id = id; }

  // Deep copy (values only, grad dropped, same requires_grad).
  Tensor clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->v = d_->v;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }

  bool all_finite() const {
    for (T x : d_->v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::shared_ptr<TensorData<T>>& impl() { return d_; }
  const std::shared_ptr<TensorData<T>>& impl() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// Named parameter list; the unit shared by the optimizer and checkpoints.
template <typename T>
using ParamSet = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void set_requires_grad(ParamSet<T>& params, bool rg) {
  for (auto& [name, t] : params) t.set_requires_grad(rg);
}

template <typename T>
void zero_grads(ParamSet<T>& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

}  // namespace gdpa
