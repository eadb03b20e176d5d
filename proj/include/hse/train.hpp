#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hse/data.hpp"
#include "hse/model.hpp"
#include "hse/optimizer.hpp"

namespace hse {

// Desk-scale defaults keep the paper's 448/512 crop ratio.
struct AugmentConfig {
  int resize = 64;
  int crop = 56;
};

Tensor resize_bilinear(const Tensor& image, int out_size);
Tensor flip_horizontal(const Tensor& image);

// Train mode: resize, uniform-random crop, 50% horizontal flip.
// Eval mode: resize, center crop (deterministic).
Tensor augment_sample(const Tensor& image, SplitMix64& rng, bool train_mode,
                      const AugmentConfig& aug);

struct StagePlan {
  int stage = 1;
  double lr = 0.001;
  int epochs = 10;
  int batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 0.00005;
  int plateau_patience = 5;
  double plateau_min_delta = 1e-4;
  int plateau_max_drops = 2;
  uint64_t seed = 1;
};

// One metrics-log record per epoch. Losses are per-sample means over the
// epoch; entries for levels outside the stage's scope stay 0.
struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  int trained_level = 0;  // 1-based level in stage 1; 0 = all levels (stage 2)
  std::vector<double> loss_ce;
  std::vector<double> loss_reg;
  double loss_total = 0.0;
  std::vector<double> val_accuracy;
  double lr = 0.0;
  uint64_t seed = 0;
};

std::string epoch_record_json(const EpochRecord& rec);
void write_metrics_log(const std::string& path, const std::vector<EpochRecord>& log);

// Graph handles of the per-batch objective.
struct LossNodes {
  NodeId total = -1;                  // batch-mean combined loss
  std::vector<NodeId> ce_sums;        // per-level classification sums over the batch
  std::vector<NodeId> reg_sums;       // per-level KL sums (-1 where absent)
};

// Builds the training objective over the forward result: per sample, the sum
// of cross entropies over every classifier head at each in-scope level plus
// gamma times the KL regularizer (levels >= 2 with label regularization on).
// `only_level` restricts the objective to a single 0-based level (stage 1);
// -1 covers all computed levels.
LossNodes build_loss(Graph& graph, const ForwardResult& fwd, const ModelConfig& config,
                     const std::vector<std::vector<int>>& targets_per_level, double gamma,
                     int only_level = -1);

// Level-wise stage: for i = 1..L, optimizes branch i alone against the frozen
// trunk and the already-trained higher branches. Appends one record per epoch.
void train_stage1(HseModel& model, const Taxonomy& taxonomy, const Dataset& train,
                  const Dataset& val, const StagePlan& plan, const AugmentConfig& aug,
                  std::vector<EpochRecord>& log);

// Joint fine-tuning of every parameter on the combined objective.
void train_stage2(HseModel& model, const Taxonomy& taxonomy, const Dataset& train,
                  const Dataset& val, const StagePlan& plan, const AugmentConfig& aug,
                  std::vector<EpochRecord>& log);

// Assembles an augmented batch tensor in the model's dtype.
Tensor assemble_batch(const Dataset& dataset, const std::vector<int>& indices,
                      const AugmentConfig& aug, bool train_mode, SplitMix64& rng, DType dtype);

// Per-level argmax accuracy on a dataset in eval mode.
std::vector<double> validation_accuracy(HseModel& model, const Taxonomy& taxonomy,
                                        const Dataset& dataset, const AugmentConfig& aug,
                                        int batch_size, int up_to_level = 0);

}  // namespace hse
