#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "accunet/tensor.hpp"

namespace accunet {

// Reverse-mode differentiation record. Ops append nodes in forward execution
// order, so the list is topologically sorted; backward walks it in reverse.
// Each node owns a closure that maps the output gradient to input gradients.
template <typename T>
class TapeT {
 public:
  using GradMap = std::unordered_map<int64_t, TensorT<T>>;
  using BackwardFn = std::function<void(const TensorT<T>& grad_out, TapeT& tape)>;

  struct Node {
    int64_t out_id;
    std::vector<int64_t> in_ids;
    const char* op;
    BackwardFn backward;
  };

  void record(const TensorT<T>& out, std::vector<int64_t> in_ids, const char* op,
              BackwardFn fn) {
    outputs_.insert(out.id);
    nodes_.push_back(Node{out.id, std::move(in_ids), op, std::move(fn)});
  }

  bool produced(const TensorT<T>& t) const { return outputs_.count(t.id) > 0; }

  // Accumulate a gradient contribution for tensor id.
  void accumulate(int64_t id, const TensorT<T>& g) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      grads_.emplace(id, g.clone());
      return;
    }
    TensorT<T>& acc = it->second;
    if (acc.shape != g.shape)
      throw ShapeError("gradient shape mismatch: " + acc.shape.str() + " vs " +
                       g.shape.str());
    T* a = acc.ptr();
    const T* b = g.ptr();
    for (int64_t i = 0; i < g.numel(); ++i) a[i] += b[i];
  }

  void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward requires a scalar loss, got " + loss.shape.str());
    if (!produced(loss))
      throw ValueError("loss tensor was not produced on this tape");
    grads_.clear();
    grads_.emplace(loss.id, TensorT<T>::full(Shape{1, 1, 1, 1}, T(1)));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto g = grads_.find(it->out_id);
      if (g == grads_.end()) continue;  // not reachable from the loss
      it->backward(g->second, *this);
    }
  }

  const TensorT<T>* grad(const TensorT<T>& t) const {
    auto it = grads_.find(t.id);
    return it == grads_.end() ? nullptr : &it->second;
  }

  const TensorT<T>* grad_by_id(int64_t id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
  }

  size_t num_nodes() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
    outputs_.clear();
  }

 private:
  std::vector<Node> nodes_;
  GradMap grads_;
  std::unordered_set<int64_t> outputs_;
};

using Tape = TapeT<float>;

}  // namespace accunet
