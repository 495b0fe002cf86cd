#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "wrtsam/tensor.hpp"

namespace wrtsam {

class Graph;

/// Handle to a value recorded in a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

using BackwardFn = std::function<void(Graph&)>;

/// Tape of layer applications.
///
/// Every op appends a node holding its output and a hand-derived backward
/// rule. `backward` walks the tape once, in exact reverse order, and then
/// flushes leaf gradients into trainable Parameters. Nodes that cannot reach
/// a gradient-requiring leaf are skipped, so frozen weights cost nothing on
/// the way back.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf without gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept in the graph (read it back with `grad`).
  Var input(Tensor value, bool requires_grad = true);
  /// Leaf bound to a Parameter; its gradient is added to `p.grad` when the
  /// parameter is trainable.
  Var parameter(Parameter& p);

  /// Appends an op node. `backward` is only invoked when the node needs a
  /// gradient and received one.
  Var record(std::string_view name, Tensor value, std::vector<Var> parents,
             BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient accumulator of `v`, allocated as zeros on first access.
  Tensor& grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  const std::string& name(Var v) const { return nodes_.at(v.id).name; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  /// Seeds d(sum of root)/d(root) = 1 and propagates. Calling it twice on the
  /// same tape is an error.
  void backward(Var root);

  /// Op names in the order their backward rules ran.
  const std::vector<std::string>& backward_trace() const { return trace_; }

  /// Test hook: scales the incoming gradient of every node named `op` by
  /// `factor` before its rule runs, simulating a broken backward rule.
  static void corrupt_backward(std::string op, double factor = 1.5);
  static void clear_corruption();

 private:
  struct Node {
    std::string name;
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::string> trace_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

}  // namespace wrtsam
