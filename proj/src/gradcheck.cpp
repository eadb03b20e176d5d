#include "hse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hse/errors.hpp"
#include "hse/rng.hpp"

namespace hse {

namespace {

// Projection of the output to a scalar so multi-output ops reduce to one
// number; the projection vector is a pure function of the seed and shape.
Tensor projection_for(const Tensor& out, uint64_t seed) {
  SplitMix64 rng(seed ^ static_cast<uint64_t>(out.numel()));
  Tensor r(out.shape(), out.dtype());
  for (int64_t i = 0; i < r.numel(); ++i) r.set(i, rng.next_double(-1.0, 1.0));
  return r;
}

double project(const Tensor& out, const Tensor& r) {
  double s = 0.0;
  for (int64_t i = 0; i < out.numel(); ++i) s += out.get(i) * r.get(i);
  if (!std::isfinite(s)) throw NumericError("grad_check: non-finite value during probing");
  return s;
}

}  // namespace

GradCheckReport grad_check(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                           double step, double tol, uint64_t projection_seed) {
  for (const Tensor& t : inputs) {
    if (t.dtype() != DType::Float64)
      throw NumericError("grad_check: inputs must be float64");
    if (!t.all_finite()) throw NumericError("grad_check: non-finite input");
  }

  // Analytic pass.
  std::vector<Tensor> params = inputs;
  for (Tensor& p : params) p.set_requires_grad(true);
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (Tensor& p : params) ids.push_back(g.leaf(&p));
  NodeId out = build(g, ids);
  Tensor r = projection_for(g.value(out), projection_seed);
  g.backward(out, r);

  auto eval = [&](const std::vector<Tensor>& pts) {
    Graph h;
    std::vector<NodeId> cids;
    cids.reserve(pts.size());
    for (const Tensor& p : pts) cids.push_back(h.constant(p));
    NodeId o = build(h, cids);
    return project(h.value(o), r);
  };

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (size_t pi = 0; pi < inputs.size(); ++pi) {
    const Tensor& analytic = params[pi].has_grad()
                                 ? params[pi].grad()
                                 : Tensor::zeros(inputs[pi].shape(), DType::Float64);
    for (int64_t e = 0; e < inputs[pi].numel(); ++e) {
      double x = inputs[pi].get(e);
      double h = step * std::max(1.0, std::abs(x));
      probe[pi].set(e, x + h);
      double fp = eval(probe);
      probe[pi].set(e, x - h);
      double fm = eval(probe);
      probe[pi].set(e, x);
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic.get(e);
      double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_rel_err = std::max(report.max_rel_err, std::abs(a - numeric) / denom);
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace hse
