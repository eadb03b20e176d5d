#include "hse/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "hse/errors.hpp"

namespace hse {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // model
      "feature_dim", "semantic_dim", "attention_hidden", "trunk_widths", "enable_serl",
      "enable_sglr", "detach_guidance", "dtype", "temperature",
      // training
      "batch_size", "momentum", "weight_decay", "lr_stage1", "lr_stage2", "epochs_stage1",
      "epochs_stage2", "plateau_patience", "plateau_min_delta", "plateau_max_drops", "seed",
      // augmentation
      "resize", "crop",
      // synthetic data generation
      "image_size", "branching", "train_per_leaf", "val_per_leaf", "test_per_leaf",
      "noise_amplitude",
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  KeyValueConfig kv;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected key=value");
    kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw DataError("config: empty key");
  entries_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("config key " + key + ": cannot parse '" + it->second + "' as a number");
  }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw DataError("config key " + key + ": cannot parse '" + it->second + "' as an integer");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DataError("config key " + key + ": cannot parse '" + v + "' as a boolean");
}

uint64_t KeyValueConfig::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw DataError("config key " + key + ": cannot parse '" + it->second + "' as an integer");
  }
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(trim(item)));
    } catch (const std::exception&) {
      throw DataError("config key " + key + ": cannot parse '" + it->second +
                      "' as a comma-separated integer list");
    }
  }
  if (out.empty())
    throw DataError("config key " + key + ": empty list");
  return out;
}

void KeyValueConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config file: " + path);
  for (const auto& [k, v] : entries_) os << k << "=" << v << "\n";
}

void KeyValueConfig::check_known_keys() const {
  for (const auto& [k, v] : entries_)
    if (!known_keys().count(k)) throw UsageError("unknown config key: " + k);
}

ModelConfig model_config_from(const KeyValueConfig& kv, const Taxonomy& taxonomy) {
  ModelConfig cfg;
  cfg.levels = taxonomy.level_count();
  cfg.class_counts = taxonomy.level_sizes();
  cfg.feature_dim = kv.get_int("feature_dim", cfg.feature_dim);
  cfg.semantic_dim = kv.get_int("semantic_dim", cfg.semantic_dim);
  cfg.attention_hidden = kv.get_int("attention_hidden", cfg.attention_hidden);
  cfg.trunk_widths = kv.get_int_list("trunk_widths", cfg.trunk_widths);
  cfg.enable_serl = kv.get_bool("enable_serl", cfg.enable_serl);
  cfg.enable_sglr = kv.get_bool("enable_sglr", cfg.enable_sglr);
  cfg.detach_guidance = kv.get_bool("detach_guidance", cfg.detach_guidance);
  cfg.temperature = kv.get_double("temperature", cfg.temperature);
  std::string dt = kv.get_string("dtype", "float32");
  if (dt == "float32")
    cfg.dtype = DType::Float32;
  else if (dt == "float64")
    cfg.dtype = DType::Float64;
  else
    throw DataError("config key dtype: expected float32 or float64, got " + dt);
  cfg.check_against(taxonomy);
  return cfg;
}

StagePlan stage_plan_from(const KeyValueConfig& kv, int stage) {
  StagePlan plan;
  plan.stage = stage;
  // Stage 2 fine-tunes at a tenth of the stage-1 rate by default.
  plan.lr = stage == 1 ? kv.get_double("lr_stage1", 0.001) : kv.get_double("lr_stage2", 0.0001);
  plan.epochs = stage == 1 ? kv.get_int("epochs_stage1", 10) : kv.get_int("epochs_stage2", 5);
  plan.batch_size = kv.get_int("batch_size", 8);
  plan.momentum = kv.get_double("momentum", 0.9);
  plan.weight_decay = kv.get_double("weight_decay", 0.00005);
  plan.plateau_patience = kv.get_int("plateau_patience", 5);
  plan.plateau_min_delta = kv.get_double("plateau_min_delta", 1e-4);
  plan.plateau_max_drops = kv.get_int("plateau_max_drops", 2);
  plan.seed = kv.get_u64("seed", 1);
  if (plan.batch_size < 1) throw DataError("batch_size must be >= 1");
  if (plan.epochs < 0) throw DataError("epochs must be >= 0");
  return plan;
}

AugmentConfig augment_config_from(const KeyValueConfig& kv) {
  AugmentConfig aug;
  aug.resize = kv.get_int("resize", aug.resize);
  aug.crop = kv.get_int("crop", aug.crop);
  if (aug.crop < 1 || aug.crop > aug.resize)
    throw DataError("augmentation: need 1 <= crop <= resize");
  return aug;
}

SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv) {
  SyntheticSpec spec;
  spec.image_size = kv.get_int("image_size", spec.image_size);
  spec.branching = kv.get_int_list("branching", spec.branching);
  spec.train_per_leaf = kv.get_int("train_per_leaf", spec.train_per_leaf);
  spec.val_per_leaf = kv.get_int("val_per_leaf", spec.val_per_leaf);
  spec.test_per_leaf = kv.get_int("test_per_leaf", spec.test_per_leaf);
  spec.noise_amplitude = kv.get_int("noise_amplitude", spec.noise_amplitude);
  spec.seed = kv.get_u64("seed", spec.seed);
  spec.check();
  return spec;
}

}  // namespace hse
