#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wrtsam/graph.hpp"

namespace wrtsam {

/// Builds the op under test from one graph leaf per checked tensor.
using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<leaf index>[<element>]"
  std::size_t checked = 0;
};

/// Compares the analytic gradient of sum(outputs) against central finite
/// differences for every element of every tensor in `points`.
///
/// Per-element error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// vanishing gradients from turning rounding noise into a large ratio.
/// Throws Error when a forward pass produces non-finite values.
GradCheckResult grad_check(const GraphBuilder& build,
                           std::vector<Tensor> points, double eps = 1e-5,
                           double floor = 1e-3);

}  // namespace wrtsam
