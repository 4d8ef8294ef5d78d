#pragma once

// Reverse-mode differentiation over a recorded computation. Ops append one
// node per output; backward replays the nodes in reverse, accumulating into
// the grad buffers of whatever tensors each closure captured. One tape is
// single-writer; concurrent forward passes need separate tapes.

#include <functional>
#include <unordered_set>
#include <vector>

#include "fcmnet/tensor.hpp"

namespace fcmnet {

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(const TensorPtr<T>& out, BackwardFn fn) {
    produced_.insert(out.get());
    nodes_.push_back(Node{out, std::move(fn)});
  }

  bool recorded(const Tensor4<T>* t) const { return produced_.count(t) != 0; }

  size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and runs every node in reverse order. The root
  // must be scalar-shaped and must have been produced on this tape.
  void backward(const TensorPtr<T>& root) {
    if (!root || root->shape != Shape4{1, 1, 1, 1}) {
      throw UsageError("Tape::backward: root must be a (1,1,1,1) scalar");
    }
    if (!recorded(root.get())) {
      throw UsageError("Tape::backward: root was not recorded on this tape");
    }
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->fn();
    }
  }

  // Clears the grad buffers of every tensor produced on this tape. Leaf
  // (parameter) grads are the caller's to reset.
  void zero_grads() {
    for (auto& node : nodes_) {
      if (node.out->has_grad()) node.out->zero_grad();
    }
  }

 private:
  struct Node {
    TensorPtr<T> out;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const Tensor4<T>*> produced_;
};

}  // namespace fcmnet
