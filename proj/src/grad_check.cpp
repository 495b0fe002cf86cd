#include "wrtsam/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace wrtsam {

namespace {

double evaluate(const GraphBuilder& build, const std::vector<Tensor>& points) {
  Graph g(false);
  std::vector<Var> leaves;
  leaves.reserve(points.size());
  for (const Tensor& t : points) leaves.push_back(g.input(t, false));
  const Tensor& out = g.value(build(g, leaves));
  if (!out.all_finite()) throw Error("grad_check: non-finite forward output");
  return sum(out);
}

}  // namespace

GradCheckResult grad_check(const GraphBuilder& build, std::vector<Tensor> points,
                           double eps, double floor) {
  Graph g;
  std::vector<Var> leaves;
  for (const Tensor& t : points) leaves.push_back(g.input(t, true));
  const Var out = build(g, leaves);
  if (!g.value(out).all_finite())
    throw Error("grad_check: non-finite forward output");
  g.backward(out);

  GradCheckResult result;
  for (std::size_t li = 0; li < points.size(); ++li) {
    const Tensor analytic = g.has_grad(leaves[li]) ? g.grad(leaves[li])
                                                   : Tensor(points[li].shape());
    if (!analytic.all_finite()) throw Error("grad_check: non-finite gradient");
    for (std::size_t e = 0; e < points[li].size(); ++e) {
      const double orig = points[li][e];
      points[li][e] = orig + eps;
      const double plus = evaluate(build, points);
      points[li][e] = orig - eps;
      const double minus = evaluate(build, points);
      points[li][e] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[e];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = std::to_string(li) + "[" + std::to_string(e) + "]";
      }
    }
  }
  return result;
}

}  // namespace wrtsam
