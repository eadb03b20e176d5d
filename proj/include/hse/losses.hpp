#pragma once

#include <vector>

namespace hse {

// Softmax output together with the temperature that produced it.
struct Distribution {
  std::vector<double> probs;
  double temperature = 1.0;
};

// p_c = exp(s_c/T) / sum exp(s_c'/T), max-subtracted. T must be positive.
Distribution tempered_softmax(const std::vector<double>& scores, double temperature);

// KL(p' || p) where p' comes from the extended parent scores and p from the
// current level, both tempered at the same T. Pure function of the scores;
// in the training graph the gradient flows to s_i only.
double kl_regularizer(const std::vector<double>& s_prev_extended, const std::vector<double>& s_i,
                      double temperature);

// -log softmax(scores)[true_class] at temperature 1.
double cross_entropy(const std::vector<double>& scores, int true_class);

// L_i = sum(classification terms) + gamma * reg. Levels with semantic guidance
// carry four classification terms (three classifiers plus the fused scores).
double level_loss(const std::vector<double>& classification_terms, double regularization,
                  double gamma);

inline double default_gamma(double temperature) { return temperature * temperature; }

// Per-level components and the combined objective. Index 0 is level 1, which
// never carries a regularization term.
struct LossBundle {
  std::vector<double> classification;  // per-level classification sums
  std::vector<double> regularization;  // per-level KL terms (index 0 always 0)
  std::vector<double> combined;        // L_i
  double gamma = 16.0;
  double total = 0.0;
};

LossBundle make_loss_bundle(const std::vector<double>& classification,
                            const std::vector<double>& regularization, double gamma);

// L = L_1^c + sum_{i>=2} L_i.
double total_loss(const LossBundle& bundle);

}  // namespace hse
