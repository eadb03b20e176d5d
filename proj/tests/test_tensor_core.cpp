#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hse/autodiff.hpp"
#include "hse/gradcheck.hpp"
#include "hse/ops.hpp"
#include "hse/rng.hpp"
#include "hse/tensor.hpp"
#include "oracles.hpp"

using namespace hse;

TEST_CASE("tensor basics and invariants") {
  Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at2(1, 2) == 6.0);
  CHECK(t.all_finite());
  t.set(0, std::nan(""));
  CHECK_FALSE(t.all_finite());

  Tensor f32 = Tensor::zeros({4}, DType::Float32);
  CHECK(f32.dtype() == DType::Float32);
  CHECK_THROWS_AS(f32.data<double>(), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}, DType::Float64), ShapeError);

  Tensor g = Tensor::from_values({3}, {1, 2, 3});
  g.set_requires_grad(true);
  CHECK_FALSE(g.has_grad());
  g.grad();  // allocates zeros
  CHECK(g.has_grad());
  CHECK(g.grad().same_shape(g));
  CHECK(g.grad().dtype() == g.dtype());
}

TEST_CASE("conv2d spec examples") {
  // 1x1 identity kernel passes the input through.
  SplitMix64 rng(11);
  Tensor x = oracle::random_tensor({2, 3, 4, 5}, rng);
  Tensor wid = Tensor::zeros({3, 3, 1, 1}, DType::Float64);
  for (int c = 0; c < 3; ++c) wid.set((c * 3 + c), 1.0);
  Tensor b0 = Tensor::zeros({3}, DType::Float64);
  Tensor y = ops::conv2d(x, wid, b0, 1, 0);
  CHECK(y.bits_equal(x));

  // Hand-evaluated 2x2 cross-correlation: [[1,2],[3,4]] * [[1,0],[0,1]] = 5.
  Tensor in = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::from_values({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor out = ops::conv2d(in, w, Tensor::zeros({1}, DType::Float64), 1, 0);
  CHECK(out.numel() == 1);
  CHECK(out.get(0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(out.get(0) ==
        oracle::conv2d(in, w, Tensor::zeros({1}, DType::Float64), 1, 0).get(0));

  // Zero input: every output value equals the bias.
  Tensor zin = Tensor::zeros({1, 2, 3, 3}, DType::Float64);
  Tensor zw = oracle::random_tensor({4, 2, 3, 3}, rng);
  Tensor zb = Tensor::from_values({4}, {0.5, -1.0, 2.0, 0.0});
  Tensor zout = ops::conv2d(zin, zw, zb, 1, 1);
  for (int c = 0; c < 4; ++c)
    for (int p = 0; p < 9; ++p) CHECK(zout.get(c * 9 + p) == zb.get(c));
}

TEST_CASE("conv2d matches the quadruple-loop oracle on random cases") {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng.next_below(2));
    int cin = 1 + static_cast<int>(rng.next_below(3));
    int cout = 1 + static_cast<int>(rng.next_below(3));
    int k = 1 + static_cast<int>(rng.next_below(3));
    int h = k + static_cast<int>(rng.next_below(4));
    int w = k + static_cast<int>(rng.next_below(4));
    int stride = 1 + static_cast<int>(rng.next_below(2));
    int pad = static_cast<int>(rng.next_below(2));
    Tensor x = oracle::random_tensor({n, cin, h, w}, rng);
    Tensor wt = oracle::random_tensor({cout, cin, k, k}, rng);
    Tensor b = oracle::random_tensor({cout}, rng);
    Tensor got = ops::conv2d(x, wt, b, stride, pad);
    Tensor want = oracle::conv2d(x, wt, b, stride, pad);
    REQUIRE(got.same_shape(want));
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got.get(i) - want.get(i)) < 1e-12);
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 2, 4, 4}, DType::Float64);
  Tensor w = Tensor::zeros({1, 3, 3, 3}, DType::Float64);  // channel mismatch
  Tensor b = Tensor::zeros({1}, DType::Float64);
  CHECK_THROWS_AS(ops::conv2d(x, w, b, 1, 0), ShapeError);
  Tensor wbig = Tensor::zeros({1, 2, 7, 7}, DType::Float64);  // kernel exceeds padded input
  CHECK_THROWS_AS(ops::conv2d(x, wbig, b, 1, 0), ShapeError);
  Tensor wok = Tensor::zeros({1, 2, 3, 3}, DType::Float64);
  CHECK_THROWS_AS(ops::conv2d(x, wok, b, 0, 0), ShapeError);  // stride < 1
}

TEST_CASE("linear spec examples") {
  Tensor in = Tensor::from_values({1, 2}, {1, 2});
  Tensor w = Tensor::from_values({2, 2}, {1, 1, 0, 1});
  Tensor b = Tensor::from_values({2}, {0, 1});
  Tensor out = ops::linear(in, w, b);
  CHECK(out.get(0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(out.get(1) == doctest::Approx(3.0).epsilon(1e-15));

  // Identity weight, zero bias.
  SplitMix64 rng(3);
  Tensor x = oracle::random_tensor({3, 4}, rng);
  Tensor wid = Tensor::zeros({4, 4}, DType::Float64);
  for (int i = 0; i < 4; ++i) wid.set(i * 4 + i, 1.0);
  CHECK(ops::linear(x, wid, Tensor::zeros({4}, DType::Float64)).bits_equal(x));

  // Zero weight replicates the bias per row.
  Tensor z = ops::linear(x, Tensor::zeros({2, 4}, DType::Float64),
                         Tensor::from_values({2}, {7, -2}));
  for (int r = 0; r < 3; ++r) {
    CHECK(z.at2(r, 0) == 7.0);
    CHECK(z.at2(r, 1) == -2.0);
  }

  CHECK_THROWS_AS(ops::linear(x, Tensor::zeros({2, 5}, DType::Float64),
                              Tensor::zeros({2}, DType::Float64)),
                  ShapeError);

  for (int trial = 0; trial < 50; ++trial) {
    Tensor xi = oracle::random_tensor({4, 3}, rng);
    Tensor wi = oracle::random_tensor({5, 3}, rng);
    Tensor bi = oracle::random_tensor({5}, rng);
    Tensor got = ops::linear(xi, wi, bi);
    Tensor want = oracle::linear(xi, wi, bi);
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got.get(i) - want.get(i)) < 1e-12);
  }
}

TEST_CASE("activations") {
  Tensor x = Tensor::from_values({3}, {-1, 0, 2});
  Tensor r = ops::relu(x);
  CHECK(r.get(0) == 0.0);
  CHECK(r.get(1) == 0.0);
  CHECK(r.get(2) == 2.0);

  CHECK(ops::tanh_op(Tensor::scalar(0.0)).get(0) == 0.0);
  // Frozen from the float64 library value of tanh(1).
  CHECK(ops::tanh_op(Tensor::scalar(1.0)).get(0) ==
        doctest::Approx(0.7615941559557649).epsilon(1e-15));
}

TEST_CASE("global average pooling") {
  Tensor c = Tensor::full({1, 2, 3, 3}, 4.25, DType::Float64);
  Tensor p = ops::global_avg_pool(c);
  CHECK(p.get(0) == 4.25);
  CHECK(p.get(1) == 4.25);

  Tensor m = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(ops::global_avg_pool(m).get(0) == doctest::Approx(2.5).epsilon(1e-15));

  Tensor one = Tensor::from_values({1, 1, 1, 1}, {3.7});
  CHECK(ops::global_avg_pool(one).get(0) == 3.7);
}

TEST_CASE("softmax_spatial matches oracle and normalizes") {
  SplitMix64 rng(5);
  Tensor raw = oracle::random_tensor({2, 3, 3, 4}, rng, -3.0, 3.0);
  Tensor e = ops::softmax_spatial(raw);
  Tensor want = oracle::normalize_attention(raw);
  for (int64_t i = 0; i < e.numel(); ++i) {
    CHECK(e.get(i) >= 0.0);
    CHECK(std::abs(e.get(i) - want.get(i)) < 1e-12);
  }
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (int p = 0; p < 12; ++p) sum += e.get((n * 3 + c) * 12 + p);
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }

  // Uniform case: constant raw field over a 2x2 grid.
  Tensor u = ops::softmax_spatial(Tensor::full({1, 1, 2, 2}, 3.0, DType::Float64));
  for (int i = 0; i < 4; ++i) CHECK(u.get(i) == doctest::Approx(0.25).epsilon(1e-15));

  // Frozen from the direct exponential-sum oracle at float64.
  Tensor spike = ops::softmax_spatial(Tensor::from_values({1, 1, 2, 2}, {10, 0, 0, 0}));
  CHECK(spike.get(0) == doctest::Approx(0.9998638187585689).epsilon(1e-12));
  CHECK(spike.get(1) == doctest::Approx(4.5393747143688913e-05).epsilon(1e-9));

  // Shift invariance per channel.
  Tensor shifted = raw;
  for (int p = 0; p < 12; ++p) shifted.set(p, shifted.get(p) + 17.5);
  Tensor e2 = ops::softmax_spatial(shifted);
  for (int p = 0; p < 12; ++p) CHECK(std::abs(e2.get(p) - e.get(p)) < 1e-12);
}

TEST_CASE("attend_aggregate matches weighted-sum oracle") {
  SplitMix64 rng(9);
  Tensor fmap = oracle::random_tensor({2, 4, 2, 2}, rng);
  Tensor e = ops::softmax_spatial(oracle::random_tensor({2, 4, 2, 2}, rng));
  Tensor got = ops::attend_aggregate(fmap, e);
  Tensor want = oracle::attend_aggregate(fmap, e);
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(std::abs(got.get(i) - want.get(i)) < 1e-12);

  // Uniform attention equals global average pooling exactly.
  Tensor uni = Tensor::full({2, 4, 2, 2}, 0.25, DType::Float64);
  Tensor agg = ops::attend_aggregate(fmap, uni);
  Tensor gap = ops::global_avg_pool(fmap);
  for (int64_t i = 0; i < agg.numel(); ++i)
    CHECK(agg.get(i) == doctest::Approx(gap.get(i)).epsilon(1e-15));

  // One-hot attention selects a single location.
  Tensor onehot = Tensor::zeros({1, 1, 2, 2}, DType::Float64);
  onehot.set(3, 1.0);
  Tensor f1 = Tensor::from_values({1, 1, 2, 2}, {10, 20, 30, 40});
  CHECK(ops::attend_aggregate(f1, onehot).get(0) == 40.0);
}

TEST_CASE("graph backward: identity, square, fan-out") {
  // Identity op (scale by 1), seed of ones.
  Tensor x = Tensor::from_values({3}, {1, 2, 3});
  x.set_requires_grad(true);
  {
    Graph g;
    NodeId xi = g.leaf(&x);
    NodeId y = g.scale(xi, 1.0);
    g.backward(y);
    for (int i = 0; i < 3; ++i) CHECK(x.grad().get(i) == 1.0);
  }

  // y = x * x at x = 3 -> dy/dx = 6.
  Tensor s = Tensor::scalar(3.0);
  s.set_requires_grad(true);
  {
    Graph g;
    NodeId xi = g.leaf(&s);
    NodeId y = g.mul(xi, xi);
    g.backward(y, Tensor::scalar(1.0));
    CHECK(s.grad().get(0) == 6.0);
  }

  // Fan-out: y = x + x -> grad exactly 2.
  Tensor f = Tensor::from_values({2}, {0.5, -4.0});
  f.set_requires_grad(true);
  {
    Graph g;
    NodeId xi = g.leaf(&f);
    NodeId y = g.add(xi, xi);
    g.backward(y);
    CHECK(f.grad().get(0) == 2.0);
    CHECK(f.grad().get(1) == 2.0);
  }
}

TEST_CASE("graph backward misuse errors") {
  Graph g;
  Tensor x = Tensor::scalar(1.0);
  x.set_requires_grad(true);
  NodeId xi = g.leaf(&x);
  CHECK_THROWS_AS(g.backward(xi), ShapeError);  // no forward recorded
  NodeId y = g.scale(xi, 2.0);
  CHECK_THROWS_AS(g.backward(y, Tensor::zeros({2}, DType::Float64)), ShapeError);
  CHECK_THROWS_AS(g.backward(static_cast<NodeId>(99)), ShapeError);
}

TEST_CASE("graph records replay to identical values") {
  SplitMix64 rng(21);
  Tensor img = oracle::random_tensor({1, 2, 6, 6}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({3}, rng);
  Graph g;
  NodeId x = g.constant(img);
  NodeId y = g.relu(g.conv2d(x, g.constant(w), g.constant(b), 1, 1));
  NodeId p = g.global_avg_pool(g.avg_pool2(y));
  CHECK(g.value(p).numel() == 3);
  CHECK(g.replay());
}

TEST_CASE("determinism: identical inputs give bitwise-identical outputs") {
  SplitMix64 rng(33);
  Tensor x = oracle::random_tensor({2, 3, 5, 5}, rng);
  Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
  Tensor b = oracle::random_tensor({4}, rng);
  Tensor a1 = ops::conv2d(x, w, b, 1, 1);
  Tensor a2 = ops::conv2d(x, w, b, 1, 1);
  CHECK(a1.bits_equal(a2));
  Tensor s1 = ops::softmax_spatial(a1);
  Tensor s2 = ops::softmax_spatial(a2);
  CHECK(s1.bits_equal(s2));
}

namespace {

GradCheckReport check_unary(Tensor input, NodeId (Graph::*op)(NodeId)) {
  return grad_check(
      [op](Graph& g, const std::vector<NodeId>& in) { return (g.*op)(in[0]); }, {std::move(input)});
}

}  // namespace

TEST_CASE("grad_check: every primitive") {
  SplitMix64 rng(101);

  SUBCASE("linear") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) { return g.linear(in[0], in[1], in[2]); },
        {oracle::random_tensor({4, 3}, rng), oracle::random_tensor({5, 3}, rng),
         oracle::random_tensor({5}, rng)});
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-6);
  }
  SUBCASE("conv2d stride 1 pad 1") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) { return g.conv2d(in[0], in[1], in[2], 1, 1); },
        {oracle::random_tensor({2, 2, 4, 4}, rng), oracle::random_tensor({3, 2, 3, 3}, rng),
         oracle::random_tensor({3}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("conv2d stride 2 pad 0") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) { return g.conv2d(in[0], in[1], in[2], 2, 0); },
        {oracle::random_tensor({1, 3, 5, 5}, rng), oracle::random_tensor({2, 3, 3, 3}, rng),
         oracle::random_tensor({2}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("relu away from zero") {
    Tensor x = oracle::random_tensor({3, 7}, rng);
    for (int64_t i = 0; i < x.numel(); ++i) {
      double v = x.get(i);
      if (std::abs(v) < 1e-4) v = 0.25;  // keep probes clear of the kink
      x.set(i, v);
    }
    CHECK(check_unary(x, &Graph::relu).pass);
  }
  SUBCASE("tanh") { CHECK(check_unary(oracle::random_tensor({2, 5}, rng), &Graph::tanh_).pass); }
  SUBCASE("avg_pool2") {
    CHECK(check_unary(oracle::random_tensor({2, 2, 5, 4}, rng), &Graph::avg_pool2).pass);
  }
  SUBCASE("global_avg_pool") {
    CHECK(check_unary(oracle::random_tensor({2, 3, 3, 3}, rng), &Graph::global_avg_pool).pass);
  }
  SUBCASE("sum_spatial") {
    CHECK(check_unary(oracle::random_tensor({2, 3, 2, 4}, rng), &Graph::sum_spatial).pass);
  }
  SUBCASE("softmax_spatial") {
    CHECK(check_unary(oracle::random_tensor({2, 2, 3, 3}, rng), &Graph::softmax_spatial).pass);
  }
  SUBCASE("add mul scale") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) {
          return g.scale(g.mul(g.add(in[0], in[1]), in[1]), -0.7);
        },
        {oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3, 4}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("spatial_to_rows and back") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) {
          NodeId rows = g.spatial_to_rows(in[0]);
          return g.rows_to_spatial(rows, 2, 3, 2, 2);
        },
        {oracle::random_tensor({2, 3, 2, 2}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("repeat_rows") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) { return g.repeat_rows(in[0], 4); },
        {oracle::random_tensor({3, 2}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("concat_cols") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) { return g.concat_cols(in[0], in[1]); },
        {oracle::random_tensor({3, 2}, rng), oracle::random_tensor({3, 4}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("extend_rows") {
    std::vector<int> parent = {0, 0, 1, 2, 2, 2};
    auto r = grad_check(
        [parent](Graph& g, const std::vector<NodeId>& in) { return g.extend_rows(in[0], parent); },
        {oracle::random_tensor({2, 3}, rng)});
    CHECK(r.pass);
  }
  SUBCASE("cross_entropy_sum") {
    std::vector<int> targets = {1, 0, 2};
    auto r = grad_check(
        [targets](Graph& g, const std::vector<NodeId>& in) {
          return g.cross_entropy_sum(in[0], targets);
        },
        {oracle::random_tensor({3, 4}, rng, -2.0, 2.0)});
    CHECK(r.pass);
  }
  SUBCASE("kl_tempered_sum student side") {
    // Teacher enters as a constant: the detachment contract means only the
    // student carries gradient.
    Tensor teacher = oracle::random_tensor({2, 5}, rng, -2.0, 2.0);
    auto r = grad_check(
        [teacher](Graph& g, const std::vector<NodeId>& in) {
          return g.kl_tempered_sum(in[0], g.constant(teacher), 4.0);
        },
        {oracle::random_tensor({2, 5}, rng, -2.0, 2.0)});
    CHECK(r.pass);
  }
  SUBCASE("kl_tempered_sum with teacher backprop enabled") {
    auto r = grad_check(
        [](Graph& g, const std::vector<NodeId>& in) {
          return g.kl_tempered_sum(in[0], in[1], 2.0, /*backprop_teacher=*/true);
        },
        {oracle::random_tensor({2, 4}, rng, -2.0, 2.0),
         oracle::random_tensor({2, 4}, rng, -2.0, 2.0)});
    CHECK(r.pass);
  }
}

TEST_CASE("grad_check basics") {
  // Constant function: both gradients exactly zero.
  auto r = grad_check(
      [](Graph& g, const std::vector<NodeId>& in) { return g.scale(in[0], 0.0); },
      {Tensor::from_values({3}, {1, 2, 3})});
  CHECK(r.pass);
  CHECK(r.max_rel_err == 0.0);

  // Rejects float32 probes.
  CHECK_THROWS_AS(grad_check([](Graph& g, const std::vector<NodeId>& in) { return in[0]; },
                             {Tensor::zeros({2}, DType::Float32)}),
                  NumericError);
}

TEST_CASE("kl detachment: teacher gradient is exactly zero by default") {
  SplitMix64 rng(55);
  Tensor student = oracle::random_tensor({2, 6}, rng);
  Tensor teacher = oracle::random_tensor({2, 6}, rng);
  student.set_requires_grad(true);
  teacher.set_requires_grad(true);
  Graph g;
  NodeId s = g.leaf(&student);
  NodeId t = g.leaf(&teacher);
  NodeId kl = g.kl_tempered_sum(s, t, 4.0);
  g.backward(kl, Tensor::scalar(1.0));
  for (int64_t i = 0; i < teacher.numel(); ++i) CHECK(teacher.grad().get(i) == 0.0);
  bool any = false;
  for (int64_t i = 0; i < student.numel(); ++i) any = any || student.grad().get(i) != 0.0;
  CHECK(any);
}
