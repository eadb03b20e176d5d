#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "hse/rng.hpp"
#include "hse/taxonomy.hpp"

using namespace hse;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = std::string("/tmp/") + name;
  std::ofstream os(path);
  os << content;
  return path;
}

Taxonomy toy() {
  // Two shapes, warm/cool color families (names repeat under both shapes),
  // two markings each.
  return Taxonomy::from_rows({
      {"circle", "warm", "dot"},
      {"circle", "warm", "ring"},
      {"circle", "cool", "dot"},
      {"square", "warm", "dot"},
      {"square", "cool", "dot"},
      {"square", "cool", "ring"},
  });
}

}  // namespace

TEST_CASE("load_taxonomy assigns indices by first appearance") {
  std::string path = write_temp("tax_basic.tsv",
                                "# comment line\n"
                                "A\tB\n"
                                "A\tC\n");
  Taxonomy t = Taxonomy::load(path);
  CHECK(t.level_count() == 2);
  CHECK(t.level_sizes() == std::vector<int>{1, 2});
  CHECK(t.parent_map(1) == std::vector<int>{0, 0});
  CHECK(t.name(0, 0) == "A");
  CHECK(t.name(1, 0) == "B");
  CHECK(t.name(1, 1) == "C");
  std::remove(path.c_str());
}

TEST_CASE("load_taxonomy errors") {
  std::string empty = write_temp("tax_empty.tsv", "# only a comment\n");
  CHECK_THROWS_AS(Taxonomy::load(empty), DataError);
  std::remove(empty.c_str());

  std::string dup = write_temp("tax_dup.tsv", "A\tB\nA\tB\n");
  CHECK_THROWS_AS(Taxonomy::load(dup), DataError);
  std::remove(dup.c_str());

  std::string ragged = write_temp("tax_ragged.tsv", "A\tB\tC\nA\tB\n");
  CHECK_THROWS_AS(Taxonomy::load(ragged), DataError);
  std::remove(ragged.c_str());

  CHECK_THROWS_AS(Taxonomy::load("/tmp/does_not_exist_tax.tsv"), DataError);
}

TEST_CASE("name repetition under different parents keeps identities apart") {
  Taxonomy t = toy();
  CHECK(t.level_sizes() == std::vector<int>{2, 4, 6});
  // "warm" under circle and under square are distinct level-2 categories.
  int warm_circle = t.resolve(1, 0, "warm");
  int warm_square = t.resolve(1, 1, "warm");
  CHECK(warm_circle != warm_square);
  CHECK(t.parent_of(1, warm_circle) == 0);
  CHECK(t.parent_of(1, warm_square) == 1);
  CHECK(t.resolve(1, 1, "nope") == -1);
}

TEST_CASE("derive_label_path walks parents and stays consistent") {
  Taxonomy t = Taxonomy::from_rows({{"A", "x"}, {"A", "y"}, {"B", "z"}});
  // parent = [0,0,1]; leaf 2 has path (1, 2).
  LabelPath p = t.derive_label_path(2);
  CHECK(p.indices == std::vector<int>{1, 2});
  CHECK(t.path_consistent(p));

  for (int leaf = 0; leaf < t.level_size(1); ++leaf)
    CHECK(t.path_consistent(t.derive_label_path(leaf)));

  CHECK_THROWS_AS(t.derive_label_path(3), DataError);
  CHECK_THROWS_AS(t.derive_label_path(-1), DataError);
}

TEST_CASE("extend_scores duplicates parent scores per child") {
  // Parents A -> {a1,a2,a3}, B -> {b1}.
  Taxonomy t = Taxonomy::from_rows({{"A", "a1"}, {"A", "a2"}, {"A", "a3"}, {"B", "b1"}});
  std::vector<double> ext = t.extend_scores(1, {0.5, -1.0});
  CHECK(ext == std::vector<double>{0.5, 0.5, 0.5, -1.0});

  // One child per parent: identity.
  Taxonomy id = Taxonomy::from_rows({{"A", "a"}, {"B", "b"}});
  CHECK(id.extend_scores(1, {2.0, 3.0}) == std::vector<double>{2.0, 3.0});

  CHECK_THROWS_AS(t.extend_scores(1, {1.0}), ShapeError);
}

TEST_CASE("extend_scores properties: argmax, linearity") {
  SplitMix64 rng(41);
  Taxonomy t = toy();
  for (int trial = 0; trial < 200; ++trial) {
    int lv = 1 + static_cast<int>(rng.next_below(2));
    int np = t.level_size(lv - 1);
    std::vector<double> s(static_cast<size_t>(np)), u(static_cast<size_t>(np));
    for (int i = 0; i < np; ++i) {
      s[static_cast<size_t>(i)] = rng.next_double(-2, 2);
      u[static_cast<size_t>(i)] = rng.next_double(-2, 2);
    }
    // Force a unique argmax.
    size_t top = rng.next_below(static_cast<uint64_t>(np));
    s[top] = 5.0;

    std::vector<double> ext = t.extend_scores(lv, s);
    double mx = *std::max_element(ext.begin(), ext.end());
    CHECK(mx == 5.0);
    for (int c = 0; c < t.level_size(lv); ++c) {
      bool is_child = t.parent_of(lv, c) == static_cast<int>(top);
      CHECK((ext[static_cast<size_t>(c)] == mx) == is_child);
    }

    // Linearity: extend(a*s + b*u) == a*extend(s) + b*extend(u).
    double a = rng.next_double(-3, 3), b = rng.next_double(-3, 3);
    std::vector<double> mix(static_cast<size_t>(np));
    for (int i = 0; i < np; ++i)
      mix[static_cast<size_t>(i)] =
          a * s[static_cast<size_t>(i)] + b * u[static_cast<size_t>(i)];
    std::vector<double> lhs = t.extend_scores(lv, mix);
    std::vector<double> es = t.extend_scores(lv, s);
    std::vector<double> eu = t.extend_scores(lv, u);
    for (size_t c = 0; c < lhs.size(); ++c)
      CHECK(lhs[c] == doctest::Approx(a * es[c] + b * eu[c]).epsilon(1e-12));
  }
}

TEST_CASE("validate_taxonomy reports violations as data") {
  Taxonomy good = toy();
  CHECK(good.validate().empty());

  Taxonomy bad = good;
  bad.parents[1][0] = 2;  // out of range (level 1 has 2 categories)
  auto v = bad.validate();
  REQUIRE_FALSE(v.empty());
  bool saw_range = false;
  for (const auto& msg : v) saw_range = saw_range || msg.find("parent out of range") != std::string::npos;
  CHECK(saw_range);

  Taxonomy barren = good;
  // Point every level-3 child of level-2 category 3 elsewhere, leaving it barren.
  for (auto& p : barren.parents[2])
    if (p == 3) p = 2;
  auto vb = barren.validate();
  bool saw_barren = false;
  for (const auto& msg : vb) saw_barren = saw_barren || msg.find("barren") != std::string::npos;
  CHECK(saw_barren);
}

TEST_CASE("save then load yields an identical structure") {
  Taxonomy t = toy();
  std::string path = "/tmp/tax_roundtrip.tsv";
  t.save(path);
  Taxonomy r = Taxonomy::load(path);
  CHECK(r.names == t.names);
  CHECK(r.parents == t.parents);
  std::remove(path.c_str());
}

TEST_CASE("CUB and Butterfly-200 fixtures have the published level sizes") {
  Taxonomy cub = Taxonomy::load("fixtures/cub_taxonomy.tsv");
  CHECK(cub.level_sizes() == std::vector<int>{13, 37, 122, 200});
  CHECK(cub.validate().empty());

  // Every species path backtracks to one of the 13 orders.
  for (int leaf = 0; leaf < 200; leaf += 17) {
    LabelPath p = cub.derive_label_path(leaf);
    CHECK(p.indices.size() == 4);
    CHECK(p.indices[0] >= 0);
    CHECK(p.indices[0] < 13);
  }

  // Genus -> species extension maps 122 scores to 200.
  std::vector<double> genus_scores(122, 0.0);
  genus_scores[7] = 1.0;
  CHECK(cub.extend_scores(3, genus_scores).size() == 200);

  Taxonomy butterfly = Taxonomy::load("fixtures/butterfly200_taxonomy.tsv");
  CHECK(butterfly.level_sizes() == std::vector<int>{5, 23, 116, 200});
  CHECK(butterfly.validate().empty());

  Taxonomy vegfru = Taxonomy::load("fixtures/vegfru_taxonomy.tsv");
  CHECK(vegfru.level_sizes() == std::vector<int>{25, 292});
  CHECK(vegfru.validate().empty());
}
