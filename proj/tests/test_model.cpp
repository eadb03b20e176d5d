#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "hse/gradsuite.hpp"
#include "hse/model.hpp"
#include "hse/ops.hpp"
#include "oracles.hpp"

using namespace hse;

namespace {

Taxonomy toy_taxonomy() {
  return Taxonomy::from_rows({
      {"a", "x", "p"},
      {"a", "x", "q"},
      {"a", "y", "p"},
      {"a", "y", "q"},
      {"b", "x", "p"},
      {"b", "x", "q"},
      {"b", "y", "p"},
      {"b", "y", "q"},
  });
}

ModelConfig toy_config(const Taxonomy& t, DType dtype = DType::Float64) {
  ModelConfig cfg;
  cfg.levels = t.level_count();
  cfg.class_counts = t.level_sizes();
  cfg.trunk_widths = {4, 8};
  cfg.feature_dim = 8;
  cfg.semantic_dim = 4;
  cfg.attention_hidden = 8;
  cfg.dtype = dtype;
  return cfg;
}

ParamFilter none() {
  return [](const std::string&) { return false; };
}

}  // namespace

TEST_CASE("trunk output geometry and determinism") {
  Taxonomy t = toy_taxonomy();
  ModelConfig cfg = toy_config(t);
  cfg.trunk_widths = {4, 4, 8, 8};  // default 4-stage layout at toy widths
  HseModel model(cfg, 7, t);

  SplitMix64 rng(5);
  Tensor img = oracle::random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
  Graph g1, g2;
  ForwardResult a = model.forward(g1, img, t, none());
  ForwardResult b = model.forward(g2, img, t, none());
  // 64x64 through four 2x downsampling stages lands on a 4x4 grid.
  CHECK(a.grid_h == 4);
  CHECK(a.grid_w == 4);
  CHECK(g1.value(a.trunk_features).shape() == std::vector<int>{1, 8, 4, 4});
  // Bitwise repeatable.
  CHECK(g1.value(a.trunk_features).bits_equal(g2.value(b.trunk_features)));
  for (int lv = 0; lv < 3; ++lv)
    CHECK(g1.value(a.levels[lv].final_scores)
              .bits_equal(g2.value(b.levels[lv].final_scores)));

  // Zero image with zero trunk biases keeps the feature maps at zero.
  for (Param& p : model.params())
    if (p.name.rfind("trunk.", 0) == 0 && p.name.find(".bias") != std::string::npos)
      p.value.fill(0.0);
  Tensor zero = Tensor::zeros({1, 3, 64, 64}, DType::Float64);
  Graph gz;
  ForwardResult z = model.forward(gz, zero, t, none());
  for (int64_t i = 0; i < gz.value(z.trunk_features).numel(); ++i)
    CHECK(gz.value(z.trunk_features).get(i) == 0.0);

  // Wrong channel count is rejected.
  Graph gbad;
  CHECK_THROWS_AS(model.forward(gbad, Tensor::zeros({1, 1, 64, 64}, DType::Float64), t, none()),
                  ShapeError);
}

TEST_CASE("level 1 runs only the unguided pathway") {
  Taxonomy t = toy_taxonomy();
  HseModel model(toy_config(t), 11, t);
  SplitMix64 rng(6);
  Tensor img = oracle::random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  Graph g;
  ForwardResult fwd = model.forward(g, img, t, none());
  CHECK(fwd.levels[0].guided == -1);
  CHECK(fwd.levels[0].attention == -1);
  CHECK(fwd.levels[0].extended_from_parent == -1);
  CHECK(fwd.levels[0].final_scores == fwd.levels[0].unguided);
  // Levels 2..L carry attention and the extended parent scores.
  for (int lv = 1; lv < 3; ++lv) {
    CHECK(fwd.levels[lv].guided >= 0);
    CHECK(fwd.levels[lv].attention >= 0);
    CHECK(fwd.levels[lv].extended_from_parent >= 0);
    CHECK(g.value(fwd.levels[lv].extended_from_parent).dim(1) == t.level_size(lv));
  }
  // No phi/attention parameters exist for level 1.
  CHECK_THROWS_AS(model.param("branch1.phi.weight"), DataError);
  CHECK_NOTHROW(model.param("branch2.phi.weight"));
}

TEST_CASE("attention fields are normalized per sample and channel") {
  Taxonomy t = toy_taxonomy();
  HseModel model(toy_config(t), 13, t);
  SplitMix64 rng(8);
  Tensor img = oracle::random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  Graph g;
  ForwardResult fwd = model.forward(g, img, t, none());
  for (int lv = 1; lv < 3; ++lv) {
    const Tensor& e = g.value(fwd.levels[lv].attention);
    REQUIRE(e.shape() == std::vector<int>{2, 8, 4, 4});
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 8; ++c) {
        double sum = 0.0;
        for (int p = 0; p < 16; ++p) {
          double v = e.get(((n * 8 + c) * 16) + p);
          CHECK(v >= 0.0);
          sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("attention MLP is shared across locations") {
  // Identical feature vectors at every location give a spatially constant raw
  // field, and zero weights collapse it to the second-layer bias.
  SplitMix64 rng(9);
  const int n = 2, c = 3, h = 2, w = 2, s = 4, hidden = 5;
  Tensor feat = oracle::random_tensor({n, c, 1, 1}, rng);
  Tensor fmap({n, c, h, w}, DType::Float64);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < h * w; ++p)
        fmap.set((static_cast<int64_t>(i) * c + j) * h * w + p, feat.get(i * c + j));
  Tensor sem = oracle::random_tensor({n, s}, rng);
  Tensor w1 = oracle::random_tensor({hidden, c + s}, rng);
  Tensor b1 = oracle::random_tensor({hidden}, rng);
  Tensor w2 = oracle::random_tensor({c, hidden}, rng);
  Tensor b2 = oracle::random_tensor({c}, rng);

  auto run = [&](const Tensor& w1t, const Tensor& b1t, const Tensor& w2t, const Tensor& b2t) {
    Tensor rows = ops::concat_cols(ops::spatial_to_rows(fmap), ops::repeat_rows(sem, h * w));
    Tensor a1 = ops::tanh_op(ops::linear(rows, w1t, b1t));
    return ops::rows_to_spatial(ops::linear(a1, w2t, b2t), n, c, h, w);
  };

  Tensor raw = run(w1, b1, w2, b2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double first = raw.at4(i, j, 0, 0);
      for (int p = 1; p < h * w; ++p)
        CHECK(raw.get((static_cast<int64_t>(i) * c + j) * h * w + p) ==
              doctest::Approx(first).epsilon(1e-12));
    }

  Tensor raw0 = run(Tensor::zeros({hidden, c + s}, DType::Float64),
                    Tensor::zeros({hidden}, DType::Float64),
                    Tensor::zeros({c, hidden}, DType::Float64), b2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < h * w; ++p)
        CHECK(raw0.get((static_cast<int64_t>(i) * c + j) * h * w + p) == b2.get(j));

  // Location equivariance: permuting locations of the map permutes the raw
  // field identically, and the attended aggregate is invariant.
  std::vector<int> perm = {2, 0, 3, 1};
  Tensor fperm({n, c, h, w}, DType::Float64);
  SplitMix64 rng2(10);
  Tensor fmap2 = oracle::random_tensor({n, c, h, w}, rng2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < h * w; ++p)
        fperm.set((static_cast<int64_t>(i) * c + j) * h * w + p,
                  fmap2.get((static_cast<int64_t>(i) * c + j) * h * w + perm[p]));
  auto run_on = [&](const Tensor& m) {
    Tensor rows = ops::concat_cols(ops::spatial_to_rows(m), ops::repeat_rows(sem, h * w));
    Tensor a1 = ops::tanh_op(ops::linear(rows, w1, b1));
    return ops::rows_to_spatial(ops::linear(a1, w2, b2), n, c, h, w);
  };
  Tensor r1 = run_on(fmap2), r2 = run_on(fperm);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < h * w; ++p)
        CHECK(r2.get((static_cast<int64_t>(i) * c + j) * h * w + p) ==
              doctest::Approx(r1.get((static_cast<int64_t>(i) * c + j) * h * w + perm[p]))
                  .epsilon(1e-12));

  Tensor agg1 = ops::attend_aggregate(fmap2, ops::softmax_spatial(r1));
  Tensor agg2 = ops::attend_aggregate(fperm, ops::softmax_spatial(r2));
  for (int64_t i = 0; i < agg1.numel(); ++i)
    CHECK(agg1.get(i) == doctest::Approx(agg2.get(i)).epsilon(1e-10));
}

TEST_CASE("classifier fusion averages the three heads") {
  Taxonomy t = toy_taxonomy();
  HseModel model(toy_config(t), 17, t);
  SplitMix64 rng(12);
  Tensor img = oracle::random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  Graph g;
  ForwardResult fwd = model.forward(g, img, t, none());
  for (int lv = 1; lv < 3; ++lv) {
    const LevelScores& s = fwd.levels[lv];
    const Tensor& sg = g.value(s.guided);
    const Tensor& su = g.value(s.unguided);
    const Tensor& sc = g.value(s.concat);
    const Tensor& sf = g.value(s.final_scores);
    for (int64_t i = 0; i < sf.numel(); ++i)
      CHECK(sf.get(i) ==
            doctest::Approx((sg.get(i) + su.get(i) + sc.get(i)) / 3.0).epsilon(1e-12));
  }

  // Adding a constant to all three classifier biases shifts the fused scores
  // by that constant and leaves the argmax ranking unchanged.
  const double k = 2.5;
  Graph g0;
  ForwardResult base = model.forward(g0, img, t, none());
  for (const char* head : {"cls_g", "cls_u", "cls_c"}) {
    Tensor& b = model.param(std::string("branch3.") + head + ".bias").value;
    for (int64_t i = 0; i < b.numel(); ++i) b.set(i, b.get(i) + k);
  }
  Graph g1;
  ForwardResult shifted = model.forward(g1, img, t, none());
  const Tensor& s0 = g0.value(base.levels[2].final_scores);
  const Tensor& s1 = g1.value(shifted.levels[2].final_scores);
  for (int64_t i = 0; i < s0.numel(); ++i)
    CHECK(s1.get(i) == doctest::Approx(s0.get(i) + k).epsilon(1e-9));
}

TEST_CASE("ablation wiring: no SERL means no cross-level flow") {
  Taxonomy t = toy_taxonomy();
  ModelConfig cfg = toy_config(t);
  cfg.enable_serl = false;
  HseModel model(cfg, 21, t);
  SplitMix64 rng(14);
  Tensor img = oracle::random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);

  Graph g0;
  ForwardResult before = model.forward(g0, img, t, none());
  // Single classifier per level; regularization teacher still present.
  for (int lv = 0; lv < 3; ++lv) {
    CHECK(before.levels[lv].guided == -1);
    CHECK(before.levels[lv].final_scores == before.levels[lv].unguided);
  }
  CHECK(before.levels[1].extended_from_parent >= 0);

  // Perturbing the level-1 branch must leave deeper levels bitwise unchanged.
  Tensor& w = model.param("branch1.cls_u.weight").value;
  for (int64_t i = 0; i < w.numel(); ++i) w.set(i, w.get(i) + 0.37);
  Graph g1;
  ForwardResult after = model.forward(g1, img, t, none());
  CHECK_FALSE(g0.value(before.levels[0].final_scores)
                  .bits_equal(g1.value(after.levels[0].final_scores)));
  for (int lv = 1; lv < 3; ++lv)
    CHECK(g0.value(before.levels[lv].final_scores)
              .bits_equal(g1.value(after.levels[lv].final_scores)));

  // No guided-pathway parameters are instantiated.
  CHECK_THROWS_AS(model.param("branch2.phi.weight"), DataError);
  CHECK_THROWS_AS(model.param("branch2.varphi.weight"), DataError);
}

TEST_CASE("degenerate single-level config") {
  Taxonomy t;
  t.names = {{"only_a", "only_b"}};
  t.parents = {{}};
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.class_counts = {2};
  cfg.trunk_widths = {4, 8};
  cfg.feature_dim = 8;
  cfg.semantic_dim = 4;
  cfg.attention_hidden = 8;
  cfg.dtype = DType::Float64;
  HseModel model(cfg, 3, t);
  SplitMix64 rng(15);
  Tensor img = oracle::random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  Graph g;
  ForwardResult fwd = model.forward(g, img, t, none());
  REQUIRE(fwd.levels.size() == 1);
  CHECK(fwd.levels[0].guided == -1);
  CHECK(g.value(fwd.levels[0].final_scores).shape() == std::vector<int>{1, 2});
}

TEST_CASE("config/taxonomy mismatch is rejected") {
  Taxonomy t = toy_taxonomy();
  ModelConfig cfg = toy_config(t);
  cfg.class_counts = {2, 4, 9};
  CHECK_THROWS_AS(HseModel(cfg, 1, t), DataError);
  ModelConfig cfg2 = toy_config(t);
  cfg2.levels = 2;
  cfg2.class_counts = {2, 4};
  CHECK_THROWS_AS(HseModel(cfg2, 1, t), DataError);
}

TEST_CASE("checkpoint round-trip reproduces scores to the bit") {
  Taxonomy t = toy_taxonomy();
  ModelConfig cfg = toy_config(t, DType::Float32);
  HseModel model(cfg, 99, t);
  SplitMix64 rng(16);
  Tensor img = oracle::random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0, DType::Float32);

  Graph g0;
  ForwardResult before = model.forward(g0, img, t, none());

  const std::string path = "/tmp/hse_model_roundtrip.ntc1";
  model.save(path);
  HseModel restored(cfg, 12345, t);  // different seed: values must come from the file
  restored.load(path);
  Graph g1;
  ForwardResult after = restored.forward(g1, img, t, none());
  for (int lv = 0; lv < 3; ++lv)
    CHECK(g0.value(before.levels[lv].final_scores)
              .bits_equal(g1.value(after.levels[lv].final_scores)));
  std::remove(path.c_str());

  // Parameter names follow the documented scheme.
  CHECK_NOTHROW(model.param("trunk.0.weight"));
  CHECK_NOTHROW(model.param("branch1.psi.weight"));
  CHECK_NOTHROW(model.param("branch2.attn1.bias"));
  CHECK_NOTHROW(model.param("branch3.cls_c.weight"));

  // A mismatched architecture cannot load the checkpoint.
  model.save(path);
  ModelConfig other = toy_config(t, DType::Float32);
  other.enable_serl = false;
  HseModel wrong(other, 1, t);
  CHECK_THROWS_AS(wrong.load(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("full gradient suite passes at float64") {
  std::ostringstream sink;
  GradSuiteResult result = run_gradient_suite(sink);
  CHECK(result.pass());
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("golden forward run on the fixed-seed toy config") {
  // Frozen from the first verified build (seed 424242, float64). Guards
  // against silent numeric drift in the forward path.
  Taxonomy t = toy_taxonomy();
  HseModel model(toy_config(t), 424242, t);
  SplitMix64 rng(424242);
  Tensor img = oracle::random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  Graph g;
  ForwardResult fwd = model.forward(g, img, t, none());

  const Tensor& s1 = g.value(fwd.levels[0].final_scores);
  const double golden_l1[2] = {-0.046894624168661705, 0.002269365803061607};
  for (int i = 0; i < 2; ++i)
    CHECK(s1.get(i) == doctest::Approx(golden_l1[i]).epsilon(1e-9));

  const Tensor& s3 = g.value(fwd.levels[2].final_scores);
  REQUIRE(s3.shape() == std::vector<int>{1, 8});
  const double golden_l3[8] = {-0.0051269612080504486, -0.037121304758130365,
                               0.013622970689999722,   -0.033451705206589535,
                               0.049603040229169892,   -0.011519006836707009,
                               -0.044724758793319393,  -0.0080788422546576449};
  for (int i = 0; i < 8; ++i)
    CHECK(s3.get(i) == doctest::Approx(golden_l3[i]).epsilon(1e-9));
}
