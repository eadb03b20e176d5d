#pragma once

#include <iosfwd>

namespace hse {

struct GradSuiteResult {
  int total = 0;
  int passed = 0;
  double max_rel_err = 0.0;
  bool pass() const { return total > 0 && passed == total; }
};

// Checks every differentiable primitive plus the full toy-scale network graph
// (feature dim 8, 4x4 grid, 3 levels) against central differences at float64.
// One line per check goes to `out`.
GradSuiteResult run_gradient_suite(std::ostream& out);

}  // namespace hse
