#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wrtsam/grad_check.hpp"

namespace wrtsam::catalog {

/// One finite-difference check: `name` is the graph node it targets (or a
/// pipeline name), `points` the tensors perturbed.
struct Entry {
  std::string name;
  GraphBuilder build;
  std::vector<Tensor> points;
};

/// Every differentiable op plus the prompt-generator pipelines, on small
/// random instances. Outputs are weighted by a fixed random tensor so that
/// sum-invariant ops (layer norm, softmax) still get a non-trivial check.
std::vector<Entry> gradcheck_entries(std::uint64_t seed = 7);

struct Row {
  std::string name;
  GradCheckResult result;
  bool pass = false;
};

std::vector<Row> run_gradcheck(double tolerance = 1e-4, std::uint64_t seed = 7);

}  // namespace wrtsam::catalog
