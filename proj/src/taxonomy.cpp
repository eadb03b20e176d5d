#include "hse/taxonomy.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "hse/errors.hpp"

namespace hse {

std::vector<int> Taxonomy::level_sizes() const {
  std::vector<int> out;
  out.reserve(names.size());
  for (const auto& lv : names) out.push_back(static_cast<int>(lv.size()));
  return out;
}

const std::string& Taxonomy::name(int level, int index) const {
  return names.at(static_cast<size_t>(level)).at(static_cast<size_t>(index));
}

int Taxonomy::parent_of(int level, int index) const {
  if (level < 1) throw DataError("parent_of: level " + std::to_string(level) + " has no parent level");
  return parents.at(static_cast<size_t>(level)).at(static_cast<size_t>(index));
}

const std::vector<int>& Taxonomy::parent_map(int level) const {
  if (level < 1) throw DataError("parent_map: level " + std::to_string(level) + " has no parent level");
  return parents.at(static_cast<size_t>(level));
}

Taxonomy Taxonomy::from_rows(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) throw DataError("taxonomy: no leaf rows");
  const size_t levels = rows.front().size();
  if (levels < 2) throw DataError("taxonomy: need at least 2 levels, got " + std::to_string(levels));

  Taxonomy t;
  t.names.resize(levels);
  t.parents.resize(levels);
  // Identity is the full path prefix: key categories by (parent index, name).
  std::vector<std::map<std::pair<int, std::string>, int>> index(levels);

  for (size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != levels)
      throw DataError("taxonomy row " + std::to_string(r + 1) + ": expected " +
                      std::to_string(levels) + " columns, got " + std::to_string(row.size()));
    int parent = -1;
    for (size_t lv = 0; lv < levels; ++lv) {
      if (row[lv].empty())
        throw DataError("taxonomy row " + std::to_string(r + 1) + ": empty name at level " +
                        std::to_string(lv + 1));
      auto key = std::make_pair(parent, row[lv]);
      auto it = index[lv].find(key);
      if (it == index[lv].end()) {
        int idx = static_cast<int>(t.names[lv].size());
        t.names[lv].push_back(row[lv]);
        if (lv > 0) t.parents[lv].push_back(parent);
        it = index[lv].emplace(key, idx).first;
      } else if (lv + 1 == levels) {
        throw DataError("taxonomy row " + std::to_string(r + 1) + ": duplicate leaf path");
      }
      parent = it->second;
    }
  }
  return t;
}

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open taxonomy file: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> row;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, '\t')) row.push_back(field);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("taxonomy file is empty: " + path);
  return from_rows(rows);
}

void Taxonomy::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write taxonomy file: " + path);
  const int leaves = level_size(level_count() - 1);
  for (int leaf = 0; leaf < leaves; ++leaf) {
    LabelPath p = derive_label_path(leaf);
    for (int lv = 0; lv < level_count(); ++lv)
      os << (lv ? "\t" : "") << name(lv, p.indices[static_cast<size_t>(lv)]);
    os << "\n";
  }
  if (!os) throw DataError("short write to taxonomy file: " + path);
}

std::vector<std::string> Taxonomy::validate() const {
  std::vector<std::string> violations;
  const int levels = level_count();
  if (levels < 2) {
    violations.push_back("taxonomy has " + std::to_string(levels) + " levels; need >= 2");
    return violations;
  }
  if (parents.size() != names.size()) {
    violations.push_back("parents/names level count mismatch");
    return violations;
  }
  for (int lv = 1; lv < levels; ++lv) {
    if (parents[static_cast<size_t>(lv)].size() != names[static_cast<size_t>(lv)].size()) {
      violations.push_back("level " + std::to_string(lv + 1) + ": parent array size mismatch");
      continue;
    }
    if (level_size(lv) < level_size(lv - 1))
      violations.push_back("level " + std::to_string(lv + 1) + ": size " +
                           std::to_string(level_size(lv)) + " below parent level size " +
                           std::to_string(level_size(lv - 1)));
    std::vector<char> has_child(static_cast<size_t>(level_size(lv - 1)), 0);
    for (int c = 0; c < level_size(lv); ++c) {
      int p = parents[static_cast<size_t>(lv)][static_cast<size_t>(c)];
      if (p < 0 || p >= level_size(lv - 1))
        violations.push_back("level " + std::to_string(lv + 1) + " category " + std::to_string(c) +
                             ": parent out of range");
      else
        has_child[static_cast<size_t>(p)] = 1;
    }
    for (int p = 0; p < level_size(lv - 1); ++p)
      if (!has_child[static_cast<size_t>(p)])
        violations.push_back("level " + std::to_string(lv) + " category " + std::to_string(p) +
                             ": barren node (no children)");
  }
  return violations;
}

LabelPath Taxonomy::derive_label_path(int leaf_index) const {
  const int levels = level_count();
  if (leaf_index < 0 || leaf_index >= level_size(levels - 1))
    throw DataError("derive_label_path: leaf index " + std::to_string(leaf_index) +
                    " out of range [0," + std::to_string(level_size(levels - 1)) + ")");
  LabelPath path;
  path.indices.assign(static_cast<size_t>(levels), 0);
  int cur = leaf_index;
  for (int lv = levels - 1; lv >= 0; --lv) {
    path.indices[static_cast<size_t>(lv)] = cur;
    if (lv > 0) cur = parent_of(lv, cur);
  }
  return path;
}

bool Taxonomy::path_consistent(const LabelPath& path) const {
  if (static_cast<int>(path.indices.size()) != level_count()) return false;
  for (int lv = 0; lv < level_count(); ++lv) {
    int c = path.indices[static_cast<size_t>(lv)];
    if (c < 0 || c >= level_size(lv)) return false;
    if (lv > 0 && parent_of(lv, c) != path.indices[static_cast<size_t>(lv - 1)]) return false;
  }
  return true;
}

std::vector<double> Taxonomy::extend_scores(int level, const std::vector<double>& s_prev) const {
  if (level < 1 || level >= level_count())
    throw DataError("extend_scores: level " + std::to_string(level + 1) + " out of range");
  if (static_cast<int>(s_prev.size()) != level_size(level - 1))
    throw ShapeError("extend_scores: got " + std::to_string(s_prev.size()) +
                     " scores for parent level of size " + std::to_string(level_size(level - 1)));
  const auto& pm = parent_map(level);
  std::vector<double> out(pm.size());
  for (size_t c = 0; c < pm.size(); ++c) out[c] = s_prev[static_cast<size_t>(pm[c])];
  return out;
}

int Taxonomy::resolve(int level, int parent_index, const std::string& target) const {
  for (int c = 0; c < level_size(level); ++c) {
    if (name(level, c) != target) continue;
    if (level == 0 || parent_of(level, c) == parent_index) return c;
  }
  return -1;
}

LabelPath Taxonomy::resolve_path(const std::vector<std::string>& path_names,
                                 const std::string& context) const {
  if (static_cast<int>(path_names.size()) != level_count())
    throw DataError(context + ": expected " + std::to_string(level_count()) + " category names, got " +
                    std::to_string(path_names.size()));
  LabelPath path;
  int parent = -1;
  for (int lv = 0; lv < level_count(); ++lv) {
    int idx = resolve(lv, parent, path_names[static_cast<size_t>(lv)]);
    if (idx < 0)
      throw DataError(context + ": unresolved category '" + path_names[static_cast<size_t>(lv)] +
                      "' at level " + std::to_string(lv + 1));
    path.indices.push_back(idx);
    parent = idx;
  }
  return path;
}

std::string Taxonomy::leaf_path_string(int leaf_index) const {
  LabelPath p = derive_label_path(leaf_index);
  std::string out;
  for (int lv = 0; lv < level_count(); ++lv) {
    if (lv) out += "/";
    out += name(lv, p.indices[static_cast<size_t>(lv)]);
  }
  return out;
}

}  // namespace hse
