#pragma once

#include <string>
#include <vector>

namespace drivecap {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Finite-difference checks for every differentiable op, the composite
// layers, both heads and the full joint model (tiny geometry, sampled
// coordinates for the large parameter tensors). tol 1e-4, h 1e-5.
std::vector<GradSuiteEntry> run_gradient_suite(uint64_t seed = 7);

bool gradient_suite_passed(const std::vector<GradSuiteEntry>& entries);

}  // namespace drivecap
