#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hse/autodiff.hpp"
#include "hse/rng.hpp"
#include "hse/taxonomy.hpp"
#include "hse/tensor.hpp"

namespace hse {

// Architecture and ablation switches. The per-level class counts must match
// the bound taxonomy. enable_serl / enable_sglr realize the ablation rows
// (guided attention off / label regularization off); with both off the model
// degenerates to independent per-level classifiers over the shared trunk.
struct ModelConfig {
  int levels = 3;
  std::vector<int> class_counts;
  int in_channels = 3;
  // One trunk stage per entry: 3x3 conv -> relu -> 2x avg pool.
  std::vector<int> trunk_widths = {16, 32, 64, 64};
  int feature_dim = 32;       // C: channels of the branch feature maps
  int semantic_dim = 16;      // output of the semantic mapper
  int attention_hidden = 32;  // hidden width of the two-layer attention MLP
  bool enable_serl = true;
  bool enable_sglr = true;
  // When set (the default), the higher level's scores enter the guidance and
  // the regularizer as constants; flip to backpropagate into them.
  bool detach_guidance = true;
  DType dtype = DType::Float32;
  double temperature = 4.0;

  int trunk_out_channels() const { return trunk_widths.back(); }
  int trunk_stages() const { return static_cast<int>(trunk_widths.size()); }
  int spatial_out(int input_extent) const;
  void check_against(const Taxonomy& taxonomy) const;
};

struct Param {
  std::string name;
  Tensor value;
};

// Per-level graph handles. `final_scores` is the level's s_i: the mean of the
// three classifier outputs when guided attention runs, otherwise the single
// classifier output. `extended_from_parent` holds s'_{i-1} (the duplicated
// parent scores) when label regularization is active.
struct LevelScores {
  NodeId guided = -1;
  NodeId unguided = -1;
  NodeId concat = -1;
  NodeId final_scores = -1;
  NodeId extended_from_parent = -1;
  NodeId attention = -1;  // normalized e, [N,C,H,W]
};

struct ForwardResult {
  NodeId trunk_features = -1;
  std::vector<LevelScores> levels;
  int grid_h = 0;
  int grid_w = 0;
};

// Predicate deciding which parameters train in the current stage; empty means
// "all parameters".
using ParamFilter = std::function<bool(const std::string&)>;

class HseModel {
 public:
  HseModel(ModelConfig config, uint64_t seed, const Taxonomy& taxonomy);

  const ModelConfig& config() const { return config_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;

  // Runs the network on a batch, recording onto `graph`. Parameters selected
  // by `trainable` enter as differentiable leaves, the rest as constants.
  // `up_to_level` limits the computed levels (0 = all); higher levels always
  // run before lower ones since each level conditions on its predecessor.
  ForwardResult forward(Graph& graph, const Tensor& images, const Taxonomy& taxonomy,
                        const ParamFilter& trainable = nullptr, int up_to_level = 0);

  void save(const std::string& path) const;
  // Restores parameter values from an NTC1 checkpoint; names and shapes must
  // match this model exactly.
  void load(const std::string& path);

  void zero_grads();

 private:
  Tensor init_xavier(std::vector<int> shape, int fan_in, int fan_out);
  Tensor init_fan_in(std::vector<int> shape, int fan_in);
  void add_param(std::string name, Tensor value);

  ModelConfig config_;
  std::vector<Param> params_;
  SplitMix64 init_rng_{0};
};

}  // namespace hse
