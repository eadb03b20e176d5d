#pragma once

#include <string>
#include <vector>

#include "hse/tensor.hpp"

namespace hse {

// One category index per level, coarsest first.
struct LabelPath {
  std::vector<int> indices;

  int leaf() const { return indices.back(); }
  bool operator==(const LabelPath& other) const { return indices == other.indices; }
};

// L-level category tree. Levels are 0-based in code (level 0 is the coarsest);
// category identity is the full ancestor path, so names may repeat under
// different parents. Immutable after construction; freely shareable.
struct Taxonomy {
  // names[level][index]; parents[level][index] holds the level-1 parent index
  // (parents[0] stays empty).
  std::vector<std::vector<std::string>> names;
  std::vector<std::vector<int>> parents;

  int level_count() const { return static_cast<int>(names.size()); }
  int level_size(int level) const { return static_cast<int>(names.at(static_cast<size_t>(level)).size()); }
  std::vector<int> level_sizes() const;
  const std::string& name(int level, int index) const;
  int parent_of(int level, int index) const;
  const std::vector<int>& parent_map(int level) const;  // level >= 1

  // Taxonomy TSV: one row of L tab-separated names per leaf, level 1 -> L,
  // '#'-prefixed comment lines ignored. Indices by first appearance per level.
  static Taxonomy load(const std::string& path);
  static Taxonomy from_rows(const std::vector<std::vector<std::string>>& rows);
  void save(const std::string& path) const;

  // Full invariant check; each violation names the level and index. An empty
  // result means the structure is valid.
  std::vector<std::string> validate() const;

  // Ancestors of a leaf by repeated parent lookup.
  LabelPath derive_label_path(int leaf_index) const;
  bool path_consistent(const LabelPath& path) const;

  // s_ext[c] = s_prev[parent(level, c)]; `level` is the finer level (>= 1).
  std::vector<double> extend_scores(int level, const std::vector<double>& s_prev) const;

  // Category at `level` with this name under the given parent (-1 at level 0).
  // Returns -1 when absent.
  int resolve(int level, int parent_index, const std::string& name) const;

  // Resolve a full name path to indices; throws DataError on failure,
  // mentioning `context` (e.g. the manifest row).
  LabelPath resolve_path(const std::vector<std::string>& path_names,
                         const std::string& context) const;

  std::string leaf_path_string(int leaf_index) const;
};

}  // namespace hse
