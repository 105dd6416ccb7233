#pragma once

#include <cstddef>
#include <deque>
#include <functional>

#include "theragan/diffnet/tensor.hpp"

namespace theragan::diffnet {

class Graph;

// Handle to a node recorded on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  // Gradient buffer; zero-filled on first access.
  Tensor& grad() const;
  bool requires_grad() const;
};

// Reverse-mode tape. Nodes are appended in topological order by construction,
// so backward simply walks the tape from the end.
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& out_value, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad);

  // Records an operation. The backward closure is dropped when no parent
  // needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Seeds d(root)/d(root) with ones and propagates to every node that
  // requires a gradient.
  void backward(Var root);
  // Same, with an explicit upstream gradient of the root's shape.
  void backward(Var root, const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

}  // namespace theragan::diffnet
