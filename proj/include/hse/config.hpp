#pragma once

#include <map>
#include <string>
#include <vector>

#include "hse/data.hpp"
#include "hse/model.hpp"
#include "hse/train.hpp"

namespace hse {

// Flat key=value text config. Lines starting with '#' and blank lines are
// ignored; later assignments win, and CLI overrides land on top.
class KeyValueConfig {
 public:
  static KeyValueConfig load(const std::string& path);
  static KeyValueConfig empty() { return KeyValueConfig(); }

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  void save(const std::string& path) const;

  // Throws UsageError on a key outside the documented set.
  void check_known_keys() const;

 private:
  std::map<std::string, std::string> entries_;
};

// Documented keys bound to the engine structs.
ModelConfig model_config_from(const KeyValueConfig& kv, const Taxonomy& taxonomy);
StagePlan stage_plan_from(const KeyValueConfig& kv, int stage);
AugmentConfig augment_config_from(const KeyValueConfig& kv);
SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv);

}  // namespace hse
