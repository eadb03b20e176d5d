#include "hse/optimizer.hpp"

#include <limits>

#include "hse/errors.hpp"

namespace hse {

SgdOptimizer::SgdOptimizer(std::vector<Param*> params, double lr, double momentum,
                           double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(lr_ > 0.0)) throw NumericError("sgd: learning rate must be > 0");
  velocity_.reserve(params_.size());
  for (Param* p : params_) velocity_.emplace_back(p->value.shape(), p->value.dtype());
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    if (!p.value.has_grad())
      throw ShapeError("sgd: parameter " + p.name + " has no gradient");
    const Tensor& g = p.value.grad();
    if (!g.same_shape(p.value))
      throw ShapeError("sgd: gradient shape mismatch for " + p.name);
    Tensor& v = velocity_[i];
    for (int64_t e = 0; e < p.value.numel(); ++e) {
      double grad = g.get(e) + weight_decay_ * p.value.get(e);
      double vel = momentum_ * v.get(e) + grad;
      v.set(e, vel);
      p.value.set(e, p.value.get(e) - lr_ * vel);
    }
  }
}

void SgdOptimizer::zero_grads() {
  for (Param* p : params_) p->value.zero_grad();
}

PlateauScheduler::PlateauScheduler(double initial_lr, int patience, double min_delta,
                                   int max_drops)
    : lr_(initial_lr),
      patience_(patience),
      min_delta_(min_delta),
      max_drops_(max_drops),
      best_(-std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::observe(double val_accuracy) {
  if (val_accuracy > best_ + min_delta_) {
    best_ = val_accuracy;
    stale_epochs_ = 0;
  } else {
    ++stale_epochs_;
    if (stale_epochs_ >= patience_ && drops_ < max_drops_) {
      lr_ /= 10.0;
      ++drops_;
      stale_epochs_ = 0;
    }
  }
  return lr_;
}

}  // namespace hse
