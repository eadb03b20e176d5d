#pragma once

#include <vector>

#include "hse/model.hpp"

namespace hse {

// SGD with momentum and decoupled-from-nothing classic weight decay:
//   g' = g + lambda * p;  v = mu * v + g';  p = p - lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Param*> params, double lr, double momentum, double weight_decay);

  void step();
  void zero_grads();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

// Divide-by-10 plateau rule: when the best validation accuracy fails to
// improve by more than `min_delta` for `patience` consecutive epochs, the
// learning rate drops tenfold, at most `max_drops` times.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, int patience = 5, double min_delta = 1e-4,
                   int max_drops = 2);

  // Records one epoch's validation accuracy and returns the current lr.
  double observe(double val_accuracy);
  double lr() const { return lr_; }
  int drops() const { return drops_; }

 private:
  double lr_;
  int patience_;
  double min_delta_;
  int max_drops_;
  double best_;
  int stale_epochs_ = 0;
  int drops_ = 0;
};

}  // namespace hse
