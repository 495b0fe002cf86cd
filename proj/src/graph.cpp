#include "wrtsam/graph.hpp"

#include <utility>

namespace wrtsam {

namespace {

struct Corruption {
  std::string op;
  double factor = 1.0;
};

Corruption& corruption() {
  static Corruption c;
  return c;
}

}  // namespace

void Graph::corrupt_backward(std::string op, double factor) {
  corruption() = Corruption{std::move(op), factor};
}

void Graph::clear_corruption() { corruption() = Corruption{}; }

Var Graph::constant(Tensor value) {
  Node n;
  n.name = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.name = "input";
  n.value = std::move(value);
  n.needs_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
  Node n;
  n.name = "param:" + p.id;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::record(std::string_view name, Tensor value, std::vector<Var> parents,
                  BackwardFn backward) {
  if (backward_done_) throw Error("graph already consumed by backward");
  if (!value.all_finite())
    throw Error("non-finite value produced by op '" + std::string(name) + "'");
  Node n;
  n.name = std::string(name);
  n.value = std::move(value);
  bool needs = false;
  if (grad_enabled_)
    for (Var p : parents) needs = needs || nodes_.at(p.id).needs_grad;
  n.needs_grad = needs;
  n.parents = std::move(parents);
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty() || !(n.grad.shape() == n.value.shape()))
    n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var root) {
  if (backward_done_)
    throw Error("backward called twice without a new forward pass");
  if (!grad_enabled_) throw Error("backward on a graph built without gradients");
  backward_done_ = true;
  grad(root).fill(1.0);

  const Corruption& bad = corruption();
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
    if (!bad.op.empty() && bad.op == n.name)
      for (double& g : n.grad.values()) g *= bad.factor;
    trace_.push_back(n.name);
    n.backward(*this);
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.param == nullptr || !n.needs_grad || n.grad.empty()) continue;
    Tensor& acc = n.param->grad;
    if (!(acc.shape() == n.grad.shape())) acc = Tensor(n.grad.shape());
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad[k];
  }
}

}  // namespace wrtsam
