#pragma once

#include <functional>
#include <vector>

#include "hse/autodiff.hpp"
#include "hse/tensor.hpp"

namespace hse {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// Builds the op under test on a fresh graph; receives one node per input, in
// order, and returns the output node.
using GraphBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

// Compares the analytic gradient of a fixed random projection of the output
// against central differences (f(x+h) - f(x-h)) / (2h) with a per-element
// step h = step * max(1, |x|). Inputs must be float64 and finite. The
// relative error uses denominator max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                           double step = 1e-5, double tol = 1e-4,
                           uint64_t projection_seed = 0x5e3d1734);

}  // namespace hse
