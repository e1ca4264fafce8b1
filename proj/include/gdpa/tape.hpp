#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gdpa/tensor.hpp"

namespace gdpa {

enum class OpKind {
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Relu,
  Clip01,
  Sum,
  Reshape,
  Conv2d,
  Linear,
  MaxPool2,
  SoftmaxCE,
  Translate,
  PadCenter,
  Blend,
};

// Define-by-run gradient tape. Rebuilt on every forward pass; operations are
// recorded in execution order, so the list is topologically sorted by
// construction and backward() is a single reverse sweep. Single-threaded.
template <typename T>
class Tape {
 public:
  struct Record {
    OpKind kind;
    std::vector<int> inputs;  // node ids (leaves get ids on first use)
    int output;
    std::shared_ptr<TensorData<T>> out_data;
    std::function<void()> backward;
  };

  int assign_id(Tensor<T>& t) {
    if (t.node_id() < 0) t.set_node_id(next_id_++);
    return t.node_id();
  }

  void record(OpKind kind, std::vector<int> input_ids, Tensor<T>& out,
              std::function<void()> backward) {
    int io = assign_id(out);
    records_.push_back(Record{kind, std::move(input_ids), io, out.impl(), std::move(backward)});
  }

  size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  void reset() {
    records_.clear();
    next_id_ = 0;
  }

  // Reverse sweep from `loss`. Leaf gradients accumulate additively across
  // calls; gradients of op outputs (intermediates) are re-derived per sweep.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw UsageError("backward on non-scalar loss " + shape_str(loss.shape()));
    if (loss.node_id() < 0 || loss.node_id() >= next_id_)
      throw UsageError("backward: loss tensor was not produced on this tape");
    for (auto& r : records_)
      if (r.out_data && !r.out_data->g.empty())
        std::fill(r.out_data->g.begin(), r.out_data->g.end(), T(0));
    loss.ensure_grad();
    loss.grad()[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->backward) it->backward();
  }

 private:
  std::vector<Record> records_;
  int next_id_ = 0;
};

template <typename T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

}  // namespace gdpa
