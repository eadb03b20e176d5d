#include "hse/metrics.hpp"

#include <cmath>
#include <fstream>

#include "hse/errors.hpp"

#include <json.hpp>

namespace hse {

std::vector<double> per_level_accuracy(const std::vector<LabelPath>& predictions,
                                       const std::vector<LabelPath>& labels) {
  if (predictions.size() != labels.size())
    throw DataError("per_level_accuracy: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(labels.size()) + " labels");
  if (labels.empty()) return {};
  const size_t levels = labels.front().indices.size();
  std::vector<int64_t> correct(levels, 0);
  for (size_t s = 0; s < labels.size(); ++s) {
    if (predictions[s].indices.size() != levels || labels[s].indices.size() != levels)
      throw DataError("per_level_accuracy: inconsistent level count at sample " +
                      std::to_string(s));
    for (size_t lv = 0; lv < levels; ++lv)
      if (predictions[s].indices[lv] == labels[s].indices[lv]) ++correct[lv];
  }
  std::vector<double> acc(levels);
  for (size_t lv = 0; lv < levels; ++lv)
    acc[lv] = static_cast<double>(correct[lv]) / static_cast<double>(labels.size());
  return acc;
}

std::pair<int64_t, int64_t> error_decomposition(const Taxonomy& taxonomy, int level,
                                                const std::vector<LabelPath>& predictions,
                                                const std::vector<LabelPath>& labels) {
  if (level < 1)
    throw DataError("error_decomposition: level 1 has no superclass");
  if (level >= taxonomy.level_count())
    throw DataError("error_decomposition: level out of range");
  if (predictions.size() != labels.size())
    throw DataError("error_decomposition: sample count mismatch");
  int64_t inter = 0, intra = 0;
  for (size_t s = 0; s < labels.size(); ++s) {
    int pred = predictions[s].indices.at(static_cast<size_t>(level));
    int truth = labels[s].indices.at(static_cast<size_t>(level));
    if (pred == truth) continue;
    if (taxonomy.parent_of(level, pred) != taxonomy.parent_of(level, truth))
      ++inter;
    else
      ++intra;
  }
  return {inter, intra};
}

double consistency_rate(const Taxonomy& taxonomy, const std::vector<LabelPath>& predictions) {
  if (predictions.empty()) return 1.0;
  int64_t consistent = 0;
  for (const LabelPath& p : predictions)
    if (taxonomy.path_consistent(p)) ++consistent;
  return static_cast<double>(consistent) / static_cast<double>(predictions.size());
}

namespace {

int argmax_row(const Tensor& scores, int row) {
  const int k = scores.dim(1);
  int best = 0;
  double best_v = scores.at2(row, 0);
  for (int j = 1; j < k; ++j) {
    double v = scores.at2(row, j);
    if (v > best_v) {
      best_v = v;
      best = j;
    }
  }
  return best;
}

double round1(double pct) { return std::round(pct * 10.0) / 10.0; }

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["sample_count"] = sample_count;
  j["mode"] = mode;
  j["consistency_rate"] = consistency_rate;
  j["levels"] = nlohmann::json::array();
  for (size_t lv = 0; lv < accuracy.size(); ++lv) {
    nlohmann::json level;
    level["level"] = lv + 1;
    level["accuracy"] = accuracy[lv];
    level["accuracy_pct"] = round1(accuracy[lv] * 100.0);
    if (lv >= 1) {
      level["inter_superclass_errors"] = inter_errors[lv];
      level["intra_superclass_errors"] = intra_errors[lv];
    }
    j["levels"].push_back(level);
  }
  return j.dump(2);
}

EvalResult evaluate_model(HseModel& model, const Taxonomy& taxonomy, const Dataset& dataset,
                          const AugmentConfig& aug, int batch_size, bool backtrack,
                          const std::string& mode_name) {
  EvalResult result;
  result.report.mode = mode_name;
  result.report.sample_count = dataset.size();
  const int levels = model.config().levels;
  result.predictions.reserve(static_cast<size_t>(dataset.size()));

  SplitMix64 unused_rng(0);
  auto reject_all = [](const std::string&) { return false; };
  for (const auto& batch_idx :
       epoch_batches(dataset.size(), batch_size, /*seed=*/0, /*epoch=*/0, /*shuffle=*/false)) {
    Tensor images =
        assemble_batch(dataset, batch_idx, aug, /*train_mode=*/false, unused_rng, model.config().dtype);
    Graph graph;
    ForwardResult fwd = model.forward(graph, images, taxonomy, reject_all);
    for (size_t r = 0; r < batch_idx.size(); ++r) {
      LabelPath pred;
      if (backtrack) {
        const Tensor& leaf_scores =
            graph.value(fwd.levels[static_cast<size_t>(levels - 1)].final_scores);
        pred = taxonomy.derive_label_path(argmax_row(leaf_scores, static_cast<int>(r)));
      } else {
        for (int lv = 0; lv < levels; ++lv) {
          const Tensor& scores = graph.value(fwd.levels[static_cast<size_t>(lv)].final_scores);
          pred.indices.push_back(argmax_row(scores, static_cast<int>(r)));
        }
      }
      result.predictions.push_back(std::move(pred));
    }
  }

  std::vector<LabelPath> labels;
  labels.reserve(static_cast<size_t>(dataset.size()));
  for (const Sample& s : dataset.samples) labels.push_back(s.label);

  result.report.accuracy = per_level_accuracy(result.predictions, labels);
  result.report.inter_errors.assign(static_cast<size_t>(levels), 0);
  result.report.intra_errors.assign(static_cast<size_t>(levels), 0);
  for (int lv = 1; lv < levels; ++lv) {
    auto [inter, intra] = error_decomposition(taxonomy, lv, result.predictions, labels);
    result.report.inter_errors[static_cast<size_t>(lv)] = inter;
    result.report.intra_errors[static_cast<size_t>(lv)] = intra;
  }
  result.report.consistency_rate = consistency_rate(taxonomy, result.predictions);
  return result;
}

void export_attention(HseModel& model, const Taxonomy& taxonomy, const Tensor& image,
                      int level, const AugmentConfig& aug, const std::string& out_pgm_path) {
  if (!model.config().enable_serl)
    throw DataError("export_attention: guided attention is disabled in this model");
  if (level < 1 || level >= model.config().levels)
    throw DataError("export_attention: level must be in [2," +
                    std::to_string(model.config().levels) + "]");

  SplitMix64 unused_rng(0);
  Tensor prepared = augment_sample(image, unused_rng, /*train_mode=*/false, aug);
  Tensor batch({1, 3, aug.crop, aug.crop}, model.config().dtype);
  for (int64_t e = 0; e < prepared.numel(); ++e) batch.set(e, prepared.get(e));

  Graph graph;
  auto reject_all = [](const std::string&) { return false; };
  ForwardResult fwd = model.forward(graph, batch, taxonomy, reject_all, level + 1);
  NodeId att = fwd.levels.at(static_cast<size_t>(level)).attention;
  if (att < 0) throw DataError("export_attention: no attention field at this level");
  const Tensor& e = graph.value(att);  // [1,C,H,W]
  const int c = e.dim(1), h = e.dim(2), w = e.dim(3);

  std::vector<double> mean(static_cast<size_t>(h) * w, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p)
      mean[static_cast<size_t>(p)] += e.get(static_cast<int64_t>(ch) * h * w + p);
  for (double& v : mean) v /= static_cast<double>(c);

  double lo = mean[0], hi = mean[0];
  for (double v : mean) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<uint8_t> gray(mean.size());
  for (size_t p = 0; p < mean.size(); ++p)
    gray[p] = static_cast<uint8_t>(std::lround((mean[p] - lo) / span * 255.0));
  write_pgm(out_pgm_path, gray, w, h);

  // Raw float sidecar: one row of values per grid row.
  std::ofstream os(out_pgm_path + ".txt");
  if (!os) throw DataError("cannot write attention sidecar for " + out_pgm_path);
  os.precision(17);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) os << (x ? " " : "") << mean[static_cast<size_t>(y) * w + x];
    os << "\n";
  }
}

}  // namespace hse
