#include "hse/model.hpp"

#include <cmath>

#include "hse/checkpoint.hpp"
#include "hse/errors.hpp"

namespace hse {

int ModelConfig::spatial_out(int input_extent) const {
  int e = input_extent;
  for (int s = 0; s < trunk_stages(); ++s) e /= 2;
  return e;
}

void ModelConfig::check_against(const Taxonomy& taxonomy) const {
  if (levels != taxonomy.level_count())
    throw DataError("model has " + std::to_string(levels) + " levels but taxonomy has " +
                    std::to_string(taxonomy.level_count()));
  if (static_cast<int>(class_counts.size()) != levels)
    throw DataError("model class_counts size " + std::to_string(class_counts.size()) +
                    " does not match level count " + std::to_string(levels));
  for (int i = 0; i < levels; ++i)
    if (class_counts[static_cast<size_t>(i)] != taxonomy.level_size(i))
      throw DataError("level " + std::to_string(i + 1) + ": model expects " +
                      std::to_string(class_counts[static_cast<size_t>(i)]) +
                      " classes, taxonomy has " + std::to_string(taxonomy.level_size(i)));
  if (levels < 1) throw DataError("model needs at least one level");
  if (feature_dim <= 0 || semantic_dim <= 0 || attention_hidden <= 0 || trunk_widths.empty())
    throw DataError("model dimensions must be positive");
}

namespace {

// Whether level `lv` (0-based) runs the guided attention pathway.
bool level_guided(const ModelConfig& cfg, int lv) { return cfg.enable_serl && lv >= 1; }

}  // namespace

Tensor HseModel::init_fan_in(std::vector<int> shape, int fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape), config_.dtype);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, init_rng_.next_double(-bound, bound));
  return t;
}

Tensor HseModel::init_xavier(std::vector<int> shape, int fan_in, int fan_out) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape), config_.dtype);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, init_rng_.next_double(-bound, bound));
  return t;
}

void HseModel::add_param(std::string name, Tensor value) {
  params_.push_back(Param{std::move(name), std::move(value)});
}

HseModel::HseModel(ModelConfig config, uint64_t seed, const Taxonomy& taxonomy)
    : config_(std::move(config)), init_rng_(seed) {
  config_.check_against(taxonomy);
  const ModelConfig& c = config_;

  // Trunk: seeded uniform fan-in init, one conv block per width.
  int prev = c.in_channels;
  for (int s = 0; s < c.trunk_stages(); ++s) {
    int width = c.trunk_widths[static_cast<size_t>(s)];
    int fan_in = prev * 3 * 3;
    std::string base = "trunk." + std::to_string(s) + ".";
    add_param(base + "weight", init_fan_in({width, prev, 3, 3}, fan_in));
    add_param(base + "bias", init_fan_in({width}, fan_in));
    prev = width;
  }

  // Branches: Xavier init for every non-trunk module, zero biases.
  const int cp = c.trunk_out_channels();
  const int C = c.feature_dim;
  const int S = c.semantic_dim;
  const int A = c.attention_hidden;
  for (int lv = 0; lv < c.levels; ++lv) {
    const int n = c.class_counts[static_cast<size_t>(lv)];
    std::string base = "branch" + std::to_string(lv + 1) + ".";
    if (level_guided(c, lv)) {
      const int np = c.class_counts[static_cast<size_t>(lv - 1)];
      add_param(base + "phi.weight", init_xavier({C, cp, 3, 3}, cp * 9, C * 9));
      add_param(base + "phi.bias", Tensor::zeros({C}, c.dtype));
      add_param(base + "varphi.weight", init_xavier({S, np}, np, S));
      add_param(base + "varphi.bias", Tensor::zeros({S}, c.dtype));
      add_param(base + "attn1.weight", init_xavier({A, C + S}, C + S, A));
      add_param(base + "attn1.bias", Tensor::zeros({A}, c.dtype));
      add_param(base + "attn2.weight", init_xavier({C, A}, A, C));
      add_param(base + "attn2.bias", Tensor::zeros({C}, c.dtype));
    }
    add_param(base + "psi.weight", init_xavier({C, cp, 3, 3}, cp * 9, C * 9));
    add_param(base + "psi.bias", Tensor::zeros({C}, c.dtype));
    if (level_guided(c, lv)) {
      add_param(base + "cls_g.weight", init_xavier({n, C}, C, n));
      add_param(base + "cls_g.bias", Tensor::zeros({n}, c.dtype));
    }
    add_param(base + "cls_u.weight", init_xavier({n, C}, C, n));
    add_param(base + "cls_u.bias", Tensor::zeros({n}, c.dtype));
    if (level_guided(c, lv)) {
      add_param(base + "cls_c.weight", init_xavier({n, 2 * C}, 2 * C, n));
      add_param(base + "cls_c.bias", Tensor::zeros({n}, c.dtype));
    }
  }
}

Param& HseModel::param(const std::string& name) {
  for (Param& p : params_)
    if (p.name == name) return p;
  throw DataError("model has no parameter named " + name);
}

const Param& HseModel::param(const std::string& name) const {
  for (const Param& p : params_)
    if (p.name == name) return p;
  throw DataError("model has no parameter named " + name);
}

ForwardResult HseModel::forward(Graph& graph, const Tensor& images, const Taxonomy& taxonomy,
                                const ParamFilter& trainable, int up_to_level) {
  const ModelConfig& c = config_;
  if (images.rank() != 4 || images.dim(1) != c.in_channels)
    throw ShapeError("model expects [N," + std::to_string(c.in_channels) +
                     ",H,W] images, got " + images.shape_str());
  if (images.dtype() != c.dtype)
    throw ShapeError(std::string("model dtype is ") + dtype_name(c.dtype) + ", images are " +
                     dtype_name(images.dtype()));
  config_.check_against(taxonomy);

  const int levels_to_run = up_to_level > 0 ? up_to_level : c.levels;

  // Register parameters: trainable ones as leaves, the rest as constants.
  std::vector<NodeId> pid(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    bool on = !trainable || trainable(params_[i].name);
    params_[i].value.set_requires_grad(on);
    pid[i] = on ? graph.leaf(&params_[i].value) : graph.constant(params_[i].value);
  }
  auto node = [&](const std::string& name) -> NodeId {
    for (size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return pid[i];
    throw DataError("model has no parameter named " + name);
  };

  ForwardResult result;

  // Trunk.
  NodeId x = graph.constant(images);
  for (int s = 0; s < c.trunk_stages(); ++s) {
    std::string base = "trunk." + std::to_string(s) + ".";
    x = graph.avg_pool2(graph.relu(graph.conv2d(x, node(base + "weight"), node(base + "bias"), 1, 1)));
  }
  result.trunk_features = x;
  result.grid_h = graph.value(x).dim(2);
  result.grid_w = graph.value(x).dim(3);
  const int n_batch = graph.value(x).dim(0);
  const int grid = result.grid_h * result.grid_w;

  NodeId prev_final = -1;
  for (int lv = 0; lv < levels_to_run; ++lv) {
    std::string base = "branch" + std::to_string(lv + 1) + ".";
    LevelScores scores;

    // Unguided pathway: psi transform then average pooling.
    NodeId psi_map =
        graph.relu(graph.conv2d(x, node(base + "psi.weight"), node(base + "psi.bias"), 1, 1));
    NodeId f_unguided = graph.global_avg_pool(psi_map);

    if (level_guided(c, lv)) {
      // Guidance enters detached unless configured otherwise.
      NodeId guide = c.detach_guidance ? graph.detach(prev_final) : prev_final;

      NodeId phi_map =
          graph.relu(graph.conv2d(x, node(base + "phi.weight"), node(base + "phi.bias"), 1, 1));
      NodeId semantic =
          graph.linear(guide, node(base + "varphi.weight"), node(base + "varphi.bias"));

      // Shared two-layer attention MLP applied at every location over
      // [feature at (w,h), semantic vector].
      NodeId rows = graph.spatial_to_rows(phi_map);
      NodeId sem_rows = graph.repeat_rows(semantic, grid);
      NodeId joint = graph.concat_cols(rows, sem_rows);
      NodeId hidden = graph.tanh_(
          graph.linear(joint, node(base + "attn1.weight"), node(base + "attn1.bias")));
      NodeId raw_rows =
          graph.linear(hidden, node(base + "attn2.weight"), node(base + "attn2.bias"));
      NodeId raw =
          graph.rows_to_spatial(raw_rows, n_batch, c.feature_dim, result.grid_h, result.grid_w);
      NodeId att = graph.softmax_spatial(raw);
      scores.attention = att;

      NodeId f_guided = graph.sum_spatial(graph.mul(att, phi_map));

      scores.guided =
          graph.linear(f_guided, node(base + "cls_g.weight"), node(base + "cls_g.bias"));
      scores.unguided =
          graph.linear(f_unguided, node(base + "cls_u.weight"), node(base + "cls_u.bias"));
      NodeId both = graph.concat_cols(f_guided, f_unguided);
      scores.concat = graph.linear(both, node(base + "cls_c.weight"), node(base + "cls_c.bias"));
      scores.final_scores = graph.scale(
          graph.add(graph.add(scores.guided, scores.unguided), scores.concat), 1.0 / 3.0);
    } else {
      scores.unguided =
          graph.linear(f_unguided, node(base + "cls_u.weight"), node(base + "cls_u.bias"));
      scores.final_scores = scores.unguided;
    }

    if (c.enable_sglr && lv >= 1) {
      NodeId teacher_src = c.detach_guidance ? graph.detach(prev_final) : prev_final;
      scores.extended_from_parent = graph.extend_rows(teacher_src, taxonomy.parent_map(lv));
    }

    prev_final = scores.final_scores;
    result.levels.push_back(scores);
  }
  return result;
}

void HseModel::save(const std::string& path) const {
  NamedTensors entries;
  entries.reserve(params_.size());
  for (const Param& p : params_) entries.emplace_back(p.name, p.value);
  save_checkpoint(path, entries);
}

void HseModel::load(const std::string& path) {
  NamedTensors entries = load_checkpoint(path);
  if (entries.size() != params_.size())
    throw DataError("checkpoint has " + std::to_string(entries.size()) + " entries, model has " +
                    std::to_string(params_.size()) + " parameters");
  for (Param& p : params_) {
    const Tensor& t = checkpoint_entry(entries, p.name);
    if (!t.same_shape(p.value) || t.dtype() != p.value.dtype())
      throw DataError("checkpoint entry " + p.name + " has shape " + t.shape_str() +
                      ", model expects " + p.value.shape_str());
    p.value = t;
  }
}

void HseModel::zero_grads() {
  for (Param& p : params_) p.value.zero_grad();
}

}  // namespace hse
