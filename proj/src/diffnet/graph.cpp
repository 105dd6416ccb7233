#include "theragan/diffnet/graph.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "theragan/error.hpp"

namespace theragan::diffnet {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw Error(ErrorKind::ShapeMismatch,
                "tensor of shape " + shape_string(shape) + " given " + std::to_string(data.size()) + " values");
  }
}

const Tensor& Var::value() const { return graph->value(id); }
Tensor& Var::grad() const { return graph->grad(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

Var Graph::constant(Tensor value) { return leaf(std::move(value), false); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& v) { return v.requires_grad(); });
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& v) { return v.requires_grad(); });
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

void Graph::backward(Var root) { backward(root, Tensor(root.shape(), 1.0)); }

void Graph::backward(Var root, const Tensor& seed) {
  if (seed.shape != root.shape()) throw Error(ErrorKind::ShapeMismatch, "backward seed shape mismatch");
  Tensor& g = grad(root.id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(n.value, n.grad);
  }
}

}  // namespace theragan::diffnet
