#include "hse/train.hpp"

#include <cmath>
#include <fstream>

#include "hse/errors.hpp"
#include "hse/losses.hpp"

#include <json.hpp>

namespace hse {

Tensor resize_bilinear(const Tensor& image, int out_size) {
  if (image.rank() != 3) throw ShapeError("resize expects [C,H,W], got " + image.shape_str());
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_size && w == out_size) return image;
  Tensor out({c, out_size, out_size}, image.dtype());
  const double sy = static_cast<double>(h) / out_size;
  const double sx = static_cast<double>(w) / out_size;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_size; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double wy = fy - y0;
      int y0c = std::max(0, std::min(h - 1, y0));
      int y1c = std::max(0, std::min(h - 1, y0 + 1));
      for (int x = 0; x < out_size; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double wx = fx - x0;
        int x0c = std::max(0, std::min(w - 1, x0));
        int x1c = std::max(0, std::min(w - 1, x0 + 1));
        double v00 = image.get((static_cast<int64_t>(ch) * h + y0c) * w + x0c);
        double v01 = image.get((static_cast<int64_t>(ch) * h + y0c) * w + x1c);
        double v10 = image.get((static_cast<int64_t>(ch) * h + y1c) * w + x0c);
        double v11 = image.get((static_cast<int64_t>(ch) * h + y1c) * w + x1c);
        double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        out.set((static_cast<int64_t>(ch) * out_size + y) * out_size + x, v);
      }
    }
  return out;
}

namespace {

Tensor crop(const Tensor& image, int top, int left, int size) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (top < 0 || left < 0 || top + size > h || left + size > w)
    throw ShapeError("crop window exceeds image " + image.shape_str());
  Tensor out({c, size, size}, image.dtype());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.set((static_cast<int64_t>(ch) * size + y) * size + x,
                image.get((static_cast<int64_t>(ch) * h + top + y) * w + left + x));
  return out;
}

}  // namespace

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("flip expects [C,H,W], got " + image.shape_str());
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape(), image.dtype());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.set((static_cast<int64_t>(ch) * h + y) * w + x,
                image.get((static_cast<int64_t>(ch) * h + y) * w + (w - 1 - x)));
  return out;
}

Tensor augment_sample(const Tensor& image, SplitMix64& rng, bool train_mode,
                      const AugmentConfig& aug) {
  if (aug.crop > aug.resize)
    throw ShapeError("augment: crop " + std::to_string(aug.crop) + " exceeds resize " +
                     std::to_string(aug.resize));
  Tensor resized = resize_bilinear(image, aug.resize);
  const int slack = aug.resize - aug.crop;
  if (!train_mode) return crop(resized, slack / 2, slack / 2, aug.crop);
  int top = static_cast<int>(rng.next_below(static_cast<uint64_t>(slack) + 1));
  int left = static_cast<int>(rng.next_below(static_cast<uint64_t>(slack) + 1));
  Tensor cropped = crop(resized, top, left, aug.crop);
  return rng.next_bool() ? flip_horizontal(cropped) : cropped;
}

Tensor assemble_batch(const Dataset& dataset, const std::vector<int>& indices,
                      const AugmentConfig& aug, bool train_mode, SplitMix64& rng, DType dtype) {
  if (indices.empty()) throw DataError("assemble_batch: empty index list");
  const int n = static_cast<int>(indices.size());
  Tensor batch({n, 3, aug.crop, aug.crop}, dtype);
  for (int i = 0; i < n; ++i) {
    const Sample& s = dataset.samples.at(static_cast<size_t>(indices[static_cast<size_t>(i)]));
    Tensor img = augment_sample(s.image, rng, train_mode, aug);
    const int64_t plane = static_cast<int64_t>(3) * aug.crop * aug.crop;
    for (int64_t e = 0; e < plane; ++e) batch.set(static_cast<int64_t>(i) * plane + e, img.get(e));
  }
  return batch;
}

LossNodes build_loss(Graph& graph, const ForwardResult& fwd, const ModelConfig& config,
                     const std::vector<std::vector<int>>& targets_per_level, double gamma,
                     int only_level) {
  LossNodes nodes;
  const int levels = static_cast<int>(fwd.levels.size());
  nodes.ce_sums.assign(static_cast<size_t>(levels), -1);
  nodes.reg_sums.assign(static_cast<size_t>(levels), -1);

  NodeId total = -1;
  const int batch = static_cast<int>(targets_per_level.at(0).size());
  for (int lv = 0; lv < levels; ++lv) {
    if (only_level >= 0 && lv != only_level) continue;
    const LevelScores& s = fwd.levels[static_cast<size_t>(lv)];
    const std::vector<int>& targets = targets_per_level.at(static_cast<size_t>(lv));

    // Every classifier head carries its own cross entropy; with guided
    // attention active that is three heads plus the fused scores.
    NodeId ce = graph.cross_entropy_sum(s.final_scores, targets);
    if (s.guided >= 0) {
      ce = graph.add(ce, graph.cross_entropy_sum(s.guided, targets));
      ce = graph.add(ce, graph.cross_entropy_sum(s.unguided, targets));
      ce = graph.add(ce, graph.cross_entropy_sum(s.concat, targets));
    }
    nodes.ce_sums[static_cast<size_t>(lv)] = ce;

    NodeId level_total = ce;
    if (s.extended_from_parent >= 0) {
      NodeId reg = graph.kl_tempered_sum(s.final_scores, s.extended_from_parent,
                                         config.temperature,
                                         /*backprop_teacher=*/!config.detach_guidance);
      nodes.reg_sums[static_cast<size_t>(lv)] = reg;
      level_total = graph.add(ce, graph.scale(reg, gamma));
    }
    total = total < 0 ? level_total : graph.add(total, level_total);
  }
  if (total < 0) throw DataError("build_loss: no level in scope");
  nodes.total = graph.scale(total, 1.0 / batch);
  return nodes;
}

namespace {

std::vector<std::vector<int>> gather_targets(const Dataset& dataset,
                                             const std::vector<int>& indices, int levels) {
  std::vector<std::vector<int>> targets(static_cast<size_t>(levels));
  for (auto& t : targets) t.reserve(indices.size());
  for (int idx : indices) {
    const LabelPath& p = dataset.samples.at(static_cast<size_t>(idx)).label;
    for (int lv = 0; lv < levels; ++lv)
      targets[static_cast<size_t>(lv)].push_back(p.indices.at(static_cast<size_t>(lv)));
  }
  return targets;
}

int argmax_row(const Tensor& scores, int row) {
  const int k = scores.dim(1);
  int best = 0;
  double best_v = scores.at2(row, 0);
  for (int j = 1; j < k; ++j) {
    double v = scores.at2(row, j);
    if (v > best_v) {  // ties keep the lowest index
      best_v = v;
      best = j;
    }
  }
  return best;
}

// Shared epoch loop. `only_level` < 0 trains the whole objective.
void run_epochs(HseModel& model, const Taxonomy& taxonomy, const Dataset& train,
                const Dataset& val, const StagePlan& plan, const AugmentConfig& aug,
                int only_level, const ParamFilter& trainable, std::vector<EpochRecord>& log) {
  const ModelConfig& cfg = model.config();
  const int levels = cfg.levels;
  const double gamma = default_gamma(cfg.temperature);
  const int up_to = only_level >= 0 ? only_level + 1 : 0;

  std::vector<Param*> trainable_params;
  for (Param& p : model.params())
    if (!trainable || trainable(p.name)) trainable_params.push_back(&p);
  SgdOptimizer opt(trainable_params, plan.lr, plan.momentum, plan.weight_decay);
  PlateauScheduler scheduler(plan.lr, plan.plateau_patience, plan.plateau_min_delta,
                             plan.plateau_max_drops);

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    SplitMix64 aug_rng = SplitMix64(plan.seed)
                             .fork(static_cast<uint64_t>(plan.stage))
                             .fork(static_cast<uint64_t>(only_level + 1))
                             .fork(static_cast<uint64_t>(epoch));
    std::vector<double> ce_sum(static_cast<size_t>(levels), 0.0);
    std::vector<double> reg_sum(static_cast<size_t>(levels), 0.0);
    double total_sum = 0.0;

    for (const auto& batch_idx :
         epoch_batches(train.size(), plan.batch_size, plan.seed, epoch, /*shuffle=*/true)) {
      Tensor images = assemble_batch(train, batch_idx, aug, /*train_mode=*/true, aug_rng,
                                     cfg.dtype);
      Graph graph;
      ForwardResult fwd = model.forward(graph, images, taxonomy, trainable, up_to);
      auto targets = gather_targets(train, batch_idx, static_cast<int>(fwd.levels.size()));
      LossNodes loss = build_loss(graph, fwd, cfg, targets, gamma, only_level);

      if (!graph.value(loss.total).all_finite())
        throw NumericError("training loss became non-finite");
      opt.zero_grads();
      graph.backward(loss.total, Tensor::scalar(1.0, cfg.dtype));
      opt.step();

      for (int lv = 0; lv < levels; ++lv) {
        if (loss.ce_sums[static_cast<size_t>(lv)] >= 0)
          ce_sum[static_cast<size_t>(lv)] += graph.value(loss.ce_sums[static_cast<size_t>(lv)]).get(0);
        if (loss.reg_sums[static_cast<size_t>(lv)] >= 0)
          reg_sum[static_cast<size_t>(lv)] += graph.value(loss.reg_sums[static_cast<size_t>(lv)]).get(0);
      }
      total_sum += graph.value(loss.total).get(0) * static_cast<double>(batch_idx.size());
    }

    EpochRecord rec;
    rec.stage = plan.stage;
    rec.epoch = epoch + 1;
    rec.trained_level = only_level >= 0 ? only_level + 1 : 0;
    rec.seed = plan.seed;
    const double inv_n = 1.0 / static_cast<double>(train.size());
    rec.loss_ce.resize(static_cast<size_t>(levels), 0.0);
    rec.loss_reg.resize(static_cast<size_t>(levels), 0.0);
    for (int lv = 0; lv < levels; ++lv) {
      rec.loss_ce[static_cast<size_t>(lv)] = ce_sum[static_cast<size_t>(lv)] * inv_n;
      rec.loss_reg[static_cast<size_t>(lv)] = reg_sum[static_cast<size_t>(lv)] * inv_n;
    }
    rec.loss_total = total_sum * inv_n;
    rec.val_accuracy = validation_accuracy(model, taxonomy, val, aug, plan.batch_size, up_to);
    while (rec.val_accuracy.size() < static_cast<size_t>(levels)) rec.val_accuracy.push_back(0.0);

    // The plateau rule watches the trained level's validation accuracy in
    // stage 1 and the level average in stage 2.
    double watched;
    if (only_level >= 0) {
      watched = rec.val_accuracy[static_cast<size_t>(only_level)];
    } else {
      watched = 0.0;
      for (double a : rec.val_accuracy) watched += a;
      watched /= static_cast<double>(levels);
    }
    rec.lr = opt.lr();
    double new_lr = scheduler.observe(watched);
    opt.set_lr(new_lr);

    log.push_back(std::move(rec));
  }
}

}  // namespace

std::vector<double> validation_accuracy(HseModel& model, const Taxonomy& taxonomy,
                                        const Dataset& dataset, const AugmentConfig& aug,
                                        int batch_size, int up_to_level) {
  const int levels = up_to_level > 0 ? up_to_level : model.config().levels;
  std::vector<int64_t> correct(static_cast<size_t>(levels), 0);
  if (dataset.size() == 0) return std::vector<double>(static_cast<size_t>(levels), 0.0);
  SplitMix64 unused_rng(0);
  auto reject_all = [](const std::string&) { return false; };
  for (const auto& batch_idx :
       epoch_batches(dataset.size(), batch_size, /*seed=*/0, /*epoch=*/0, /*shuffle=*/false)) {
    Tensor images = assemble_batch(dataset, batch_idx, aug, /*train_mode=*/false, unused_rng,
                                   model.config().dtype);
    Graph graph;
    ForwardResult fwd = model.forward(graph, images, taxonomy, reject_all, up_to_level);
    for (int lv = 0; lv < levels; ++lv) {
      const Tensor& scores = graph.value(fwd.levels[static_cast<size_t>(lv)].final_scores);
      for (size_t r = 0; r < batch_idx.size(); ++r) {
        int truth = dataset.samples[static_cast<size_t>(batch_idx[r])]
                        .label.indices[static_cast<size_t>(lv)];
        if (argmax_row(scores, static_cast<int>(r)) == truth) ++correct[static_cast<size_t>(lv)];
      }
    }
  }
  std::vector<double> acc(static_cast<size_t>(levels));
  for (int lv = 0; lv < levels; ++lv)
    acc[static_cast<size_t>(lv)] =
        static_cast<double>(correct[static_cast<size_t>(lv)]) / dataset.size();
  return acc;
}

void train_stage1(HseModel& model, const Taxonomy& taxonomy, const Dataset& train,
                  const Dataset& val, const StagePlan& plan, const AugmentConfig& aug,
                  std::vector<EpochRecord>& log) {
  if (train.size() == 0) throw DataError("train_stage1: empty training set");
  StagePlan p = plan;
  p.stage = 1;
  for (int lv = 0; lv < model.config().levels; ++lv) {
    std::string prefix = "branch" + std::to_string(lv + 1) + ".";
    auto filter = [prefix](const std::string& name) { return name.rfind(prefix, 0) == 0; };
    run_epochs(model, taxonomy, train, val, p, aug, lv, filter, log);
  }
}

void train_stage2(HseModel& model, const Taxonomy& taxonomy, const Dataset& train,
                  const Dataset& val, const StagePlan& plan, const AugmentConfig& aug,
                  std::vector<EpochRecord>& log) {
  if (train.size() == 0) throw DataError("train_stage2: empty training set");
  StagePlan p = plan;
  p.stage = 2;
  run_epochs(model, taxonomy, train, val, p, aug, /*only_level=*/-1, /*trainable=*/nullptr, log);
}

std::string epoch_record_json(const EpochRecord& rec) {
  nlohmann::json j;
  j["stage"] = rec.stage;
  j["epoch"] = rec.epoch;
  j["trained_level"] = rec.trained_level;
  j["loss_ce"] = rec.loss_ce;
  j["loss_reg"] = rec.loss_reg;
  j["loss_total"] = rec.loss_total;
  j["val_accuracy"] = rec.val_accuracy;
  j["lr"] = rec.lr;
  j["seed"] = rec.seed;
  return j.dump();
}

void write_metrics_log(const std::string& path, const std::vector<EpochRecord>& log) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write metrics log: " + path);
  for (const EpochRecord& rec : log) os << epoch_record_json(rec) << "\n";
  if (!os) throw DataError("short write to metrics log: " + path);
}

}  // namespace hse
