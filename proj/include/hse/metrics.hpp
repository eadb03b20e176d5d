#pragma once

#include <string>
#include <vector>

#include "hse/data.hpp"
#include "hse/model.hpp"
#include "hse/train.hpp"

namespace hse {

// Hierarchy-aware evaluation summary. inter/intra error counts are defined
// for levels >= 2 (index 0 stays 0); per level, correct + inter + intra equals
// the sample count exactly.
struct MetricsReport {
  int sample_count = 0;
  std::string mode = "full";
  std::vector<double> accuracy;
  std::vector<int64_t> inter_errors;
  std::vector<int64_t> intra_errors;
  double consistency_rate = 0.0;

  // Deterministic JSON (sorted keys); percentages carry one decimal alongside
  // the full-precision fractions.
  std::string to_json() const;
};

std::vector<double> per_level_accuracy(const std::vector<LabelPath>& predictions,
                                       const std::vector<LabelPath>& labels);

// Among wrong predictions at `level` (0-based, >= 1): inter when the predicted
// category's parent differs from the truth's parent, intra otherwise.
std::pair<int64_t, int64_t> error_decomposition(const Taxonomy& taxonomy, int level,
                                                const std::vector<LabelPath>& predictions,
                                                const std::vector<LabelPath>& labels);

// Fraction of samples whose per-level predictions form a valid path.
double consistency_rate(const Taxonomy& taxonomy, const std::vector<LabelPath>& predictions);

struct EvalResult {
  std::vector<LabelPath> predictions;
  MetricsReport report;
};

// Runs the model over a dataset in eval mode. Prediction is the argmax of the
// fused scores (ties to the lowest index); backtrack mode predicts only the
// finest level and derives the ancestors through the taxonomy.
EvalResult evaluate_model(HseModel& model, const Taxonomy& taxonomy, const Dataset& dataset,
                          const AugmentConfig& aug, int batch_size, bool backtrack,
                          const std::string& mode_name);

// Channel-mean of the normalized attention at `level` (0-based, >= 1) for one
// sample: min-max scaled P5 heatmap plus a sidecar text file of raw values.
void export_attention(HseModel& model, const Taxonomy& taxonomy, const Tensor& image,
                      int level, const AugmentConfig& aug, const std::string& out_pgm_path);

}  // namespace hse
