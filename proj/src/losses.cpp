#include "hse/losses.hpp"

#include <cmath>

#include "hse/errors.hpp"
#include "hse/ops.hpp"

namespace hse {

Distribution tempered_softmax(const std::vector<double>& scores, double temperature) {
  if (!(temperature > 0.0)) throw NumericError("tempered_softmax: temperature must be > 0");
  if (scores.empty()) throw ShapeError("tempered_softmax: empty score vector");
  Distribution d;
  d.temperature = temperature;
  d.probs.resize(scores.size());
  ops::softmax_row(scores.data(), static_cast<int>(scores.size()), temperature, d.probs.data());
  return d;
}

double kl_regularizer(const std::vector<double>& s_prev_extended, const std::vector<double>& s_i,
                      double temperature) {
  if (s_prev_extended.size() != s_i.size())
    throw ShapeError("kl_regularizer: length mismatch " + std::to_string(s_prev_extended.size()) +
                     " vs " + std::to_string(s_i.size()));
  Distribution teacher = tempered_softmax(s_prev_extended, temperature);
  Distribution student = tempered_softmax(s_i, temperature);
  double kl = 0.0;
  for (size_t c = 0; c < s_i.size(); ++c)
    kl += teacher.probs[c] * (std::log(teacher.probs[c]) - std::log(student.probs[c]));
  return kl;
}

double cross_entropy(const std::vector<double>& scores, int true_class) {
  if (true_class < 0 || true_class >= static_cast<int>(scores.size()))
    throw ShapeError("cross_entropy: class index " + std::to_string(true_class) +
                     " out of range [0," + std::to_string(scores.size()) + ")");
  Distribution d = tempered_softmax(scores, 1.0);
  return -std::log(d.probs[static_cast<size_t>(true_class)]);
}

double level_loss(const std::vector<double>& classification_terms, double regularization,
                  double gamma) {
  double ce = 0.0;
  for (double t : classification_terms) ce += t;
  return ce + gamma * regularization;
}

LossBundle make_loss_bundle(const std::vector<double>& classification,
                            const std::vector<double>& regularization, double gamma) {
  if (classification.size() != regularization.size())
    throw ShapeError("loss bundle: per-level component counts disagree");
  LossBundle b;
  b.gamma = gamma;
  b.classification = classification;
  b.regularization = regularization;
  b.combined.resize(classification.size());
  for (size_t i = 0; i < classification.size(); ++i) {
    // Level 1 has no guidance, hence no regularization term.
    b.combined[i] = i == 0 ? classification[i] : classification[i] + gamma * regularization[i];
  }
  b.total = total_loss(b);
  return b;
}

double total_loss(const LossBundle& bundle) {
  double total = 0.0;
  for (double li : bundle.combined) total += li;
  return total;
}

}  // namespace hse
