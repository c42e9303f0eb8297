#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/numkernel/tensor.hpp"

namespace slotalign::nk {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Handle into a Graph. Only meaningful for the graph that produced it.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so replaying
// backward closures in reverse is a valid topological order.
//
// A graph built with `record = false` keeps only values: no gradients are
// allocated and no closures are stored. Inference uses that mode.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record = true, bool check_finite = true)
      : record_(record), check_finite_(check_finite) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Constant input. Gradients are still collected when `requires_grad`.
  Var input(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad && record_, nullptr);
  }

  // Leaf bound to a parameter; backward accumulates into `p.grad`. The graph
  // reads `p.value` by reference for the lifetime of the graph.
  Var param(Param<T>& p) {
    Node n;
    n.param = &p;
    n.needs_grad = record_;
    n.borrowed = &p.value;
    if (n.needs_grad) n.grad = Tensor<T>(p.value.shape());
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  // Frozen parameter: read-only view, never receives gradient.
  Var constant(const Param<T>& p) {
    Node n;
    n.borrowed = &p.value;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.borrowed ? *n.borrowed : n.value;
  }
  const Tensor<T>& grad(Var v) const { return nodes_[v.id].grad; }
  Tensor<T>& grad_mut(Var v) { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Records the result of an op. `backward` runs with the output gradient
  // already populated and must accumulate into the inputs' grads.
  template <typename Backward>
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, const char* op,
             Backward&& backward) {
    if (check_finite_ && !value.all_finite()) {
      throw NumericError(std::string("non-finite output from ") + op);
    }
    bool needs = false;
    if (record_) {
      for (Var in : inputs) needs = needs || nodes_[in.id].needs_grad;
    }
    Var out = push(std::move(value), needs, nullptr);
    if (needs) nodes_[out.id].backward = std::forward<Backward>(backward);
    return out;
  }

  // Seeds d(out)/d(out) = 1 for a single-element output and replays the tape.
  void backward(Var out) {
    if (!record_) throw StateError("backward on a non-recording graph");
    Node& root = nodes_[out.id];
    if (value(out).size() != 1) throw InvalidInput("backward root must be a scalar");
    if (!root.needs_grad) return;
    root.grad[0] += T(1);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward();
    }
    for (Node& n : nodes_) {
      if (n.param == nullptr || !n.needs_grad) continue;
      auto& dst = n.param->grad.values();
      const auto& src = n.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    std::function<void()> backward;
    Param<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor<T> value, bool needs_grad, Param<T>* p) {
    Node n;
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = Tensor<T>(value.shape());
    n.value = std::move(value);
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  bool check_finite_;
  std::vector<Node> nodes_;
};

}  // namespace slotalign::nk
