#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "wrtsam/grad_check.hpp"
#include "wrtsam/gradcheck_catalog.hpp"
#include "wrtsam/ops.hpp"

using namespace wrtsam;
using wrtsam::test::random_tensor;

namespace {

// Direct "same" zero-padded depthwise correlation.
Tensor naive_depthwise(const Tensor& x, const Tensor& k, const Tensor& b) {
  const Shape s = x.shape();
  const int kh = k.shape().h, kw = k.shape().w;
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = b[static_cast<std::size_t>(c)];
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int yy = y + i - kh / 2, xj = xx + j - kw / 2;
              if (yy >= 0 && yy < s.h && xj >= 0 && xj < s.w)
                acc += x.at(n, c, yy, xj) * k.at(c, 0, i, j);
            }
          out.at(n, c, y, xx) = acc;
        }
  return out;
}

Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const Shape s = x.shape(), ws = w.shape();
  const int ho = (s.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (s.w + 2 * pad - ws.w) / stride + 1;
  Tensor out(Shape{s.n, ws.n, ho, wo});
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < ws.h; ++i)
              for (int j = 0; j < ws.w; ++j) {
                const int yy = y * stride + i - pad, xj = xx * stride + j - pad;
                if (yy >= 0 && yy < s.h && xj >= 0 && xj < s.w)
                  acc += x.at(n, c, yy, xj) * w.at(o, c, i, j);
              }
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

Tensor eval1(const std::function<Var(Graph&)>& f) {
  Graph g(false);
  return g.value(f(g));
}

}  // namespace

TEST_CASE("depthwise conv: delta kernel, zero kernel, naive oracle") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {1, 2, 5, 5});
  Tensor delta(Shape{2, 1, 3, 3});
  delta.at(0, 0, 1, 1) = delta.at(1, 0, 1, 1) = 1.0;
  const Tensor zero_b(Shape{1, 1, 1, 2});
  CHECK(max_abs_diff(eval1([&](Graph& g) {
                       return ops::conv2d_depthwise(g, g.constant(x), g.constant(delta),
                                                    g.constant(zero_b));
                     }),
                     x) == 0.0);
  const Tensor zk(Shape{2, 1, 3, 3});
  const Tensor y0 = eval1([&](Graph& g) {
    return ops::conv2d_depthwise(g, g.constant(x), g.constant(zk), g.constant(zero_b));
  });
  CHECK(max_abs_diff(y0, Tensor(x.shape())) == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor xi = random_tensor(rng, {2, 3, 8, 7});
    const Tensor k = random_tensor(rng, {3, 1, 3, 5});
    const Tensor b = random_tensor(rng, {1, 1, 1, 3});
    const Tensor got = eval1([&](Graph& g) {
      return ops::conv2d_depthwise(g, g.constant(xi), g.constant(k), g.constant(b));
    });
    CHECK(max_abs_diff(got, naive_depthwise(xi, k, b)) <= 1e-12);
  }
}

TEST_CASE("depthwise conv rejects even kernels and channel mismatch") {
  Graph g;
  const Var x = g.constant(Tensor(Shape{1, 2, 4, 4}));
  const Var b = g.constant(Tensor(Shape{1, 1, 1, 2}));
  CHECK_THROWS_AS(ops::conv2d_depthwise(g, x, g.constant(Tensor(Shape{2, 1, 2, 3})), b), Error);
  CHECK_THROWS_AS(ops::conv2d_depthwise(g, x, g.constant(Tensor(Shape{3, 1, 3, 3})), b), Error);
  CHECK_THROWS_AS(ops::conv2d_strip(g, x, g.constant(Tensor(Shape{2, 1, 1, 4})), b,
                                    ops::StripOrientation::horizontal),
                  Error);
}

TEST_CASE("strip pair equals dense outer-product kernel") {
  std::mt19937_64 rng(2);
  for (int k : {7, 11, 21}) {
    const Tensor x = random_tensor(rng, {1, 2, 8, 8});
    const Tensor a = random_tensor(rng, {2, 1, 1, k});
    const Tensor bb = random_tensor(rng, {2, 1, k, 1});
    const Tensor zb(Shape{1, 1, 1, 2});
    Tensor dense(Shape{2, 1, k, k});
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) dense.at(c, 0, i, j) = bb.at(c, 0, i, 0) * a.at(c, 0, 0, j);
    const Tensor got = eval1([&](Graph& g) {
      const Var h = ops::conv2d_strip(g, g.constant(x), g.constant(a), g.constant(zb),
                                      ops::StripOrientation::horizontal);
      return ops::conv2d_strip(g, h, g.constant(bb), g.constant(zb),
                               ops::StripOrientation::vertical);
    });
    CHECK(max_abs_diff(got, naive_depthwise(x, dense, zb)) <= 1e-12);
  }
}

TEST_CASE("averaging strip on a constant input attenuates by overlap count") {
  const int k = 7, w = 10;
  const Tensor x(Shape{1, 1, 1, w}, 2.0);
  const Tensor kern(Shape{1, 1, 1, k}, 1.0 / k);
  const Tensor got = eval1([&](Graph& g) {
    return ops::conv2d_strip(g, g.constant(x), g.constant(kern),
                             g.constant(Tensor(Shape{1, 1, 1, 1})),
                             ops::StripOrientation::horizontal);
  });
  for (int j = 0; j < w; ++j) {
    const int overlap = std::min(w - 1, j + k / 2) - std::max(0, j - k / 2) + 1;
    CHECK(got.at(0, 0, 0, j) == doctest::Approx(2.0 * overlap / k).epsilon(1e-14));
  }
}

TEST_CASE("pointwise conv: identity, zero, per-pixel oracle") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, {1, 4, 2, 2});
  Tensor eye(Shape{4, 4, 1, 1});
  for (int i = 0; i < 4; ++i) eye.at(i, i, 0, 0) = 1.0;
  const Tensor zb4(Shape{1, 1, 1, 4});
  CHECK(max_abs_diff(eval1([&](Graph& g) {
                       return ops::conv2d_pointwise(g, g.constant(x), g.constant(eye),
                                                    g.constant(zb4));
                     }),
                     x) == 0.0);
  const Tensor w = random_tensor(rng, {2, 4, 1, 1});
  const Tensor b = random_tensor(rng, {1, 1, 1, 2});
  const Tensor got = eval1([&](Graph& g) {
    return ops::conv2d_pointwise(g, g.constant(x), g.constant(w), g.constant(b));
  });
  const Tensor zero_out = eval1([&](Graph& g) {
    return ops::conv2d_pointwise(g, g.constant(x), g.constant(Tensor(w.shape())),
                                 g.constant(Tensor(b.shape())));
  });
  CHECK(max_abs_diff(zero_out, Tensor(zero_out.shape())) == 0.0);
  for (int o = 0; o < 2; ++o)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < 4; ++c) acc += w.at(o, c, 0, 0) * x.at(0, c, y, xx);
        CHECK(std::abs(got.at(0, o, y, xx) - acc) <= 1e-12);
      }
}

TEST_CASE("dense strided conv matches direct summation") {
  std::mt19937_64 rng(4);
  for (auto [stride, pad, kh] : {std::tuple{1, 1, 3}, {2, 1, 3}, {4, 0, 4}, {2, 0, 2}}) {
    const Tensor x = random_tensor(rng, {2, 3, 8, 8});
    const Tensor w = random_tensor(rng, {5, 3, kh, kh});
    const Tensor b = random_tensor(rng, {1, 1, 1, 5});
    const Tensor got = eval1([&](Graph& g) {
      return ops::conv2d(g, g.constant(x), g.constant(w), g.constant(b),
                         ops::Conv2dOptions{stride, pad});
    });
    CHECK(max_abs_diff(got, naive_conv2d(x, w, b, stride, pad)) <= 1e-12);
  }
}

TEST_CASE("transposed conv scatters each input pixel into an s x s block") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(rng, {1, 2, 3, 4});
  const Tensor w = random_tensor(rng, {2, 3, 2, 2});
  const Tensor b = random_tensor(rng, {1, 1, 1, 3});
  const Tensor got = eval1([&](Graph& g) {
    return ops::conv_transpose2d(g, g.constant(x), g.constant(w), g.constant(b));
  });
  REQUIRE(got.shape() == Shape{1, 3, 6, 8});
  for (int o = 0; o < 3; ++o)
    for (int y = 0; y < 6; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < 2; ++c) acc += x.at(0, c, y / 2, xx / 2) * w.at(c, o, y % 2, xx % 2);
        CHECK(std::abs(got.at(0, o, y, xx) - acc) <= 1e-12);
      }
}

TEST_CASE("fully connected: identity, bias broadcast, matrix oracle, mismatch") {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor(rng, {1, 1, 3, 4});
  Tensor eye(Shape{1, 1, 4, 4});
  for (int i = 0; i < 4; ++i) eye.at(0, 0, i, i) = 1.0;
  CHECK(max_abs_diff(eval1([&](Graph& g) {
                       return ops::fully_connected(g, g.constant(x), g.constant(eye),
                                                   g.constant(Tensor(Shape{1, 1, 1, 4})));
                     }),
                     x) == 0.0);
  const Tensor w = random_tensor(rng, {1, 1, 4, 2});
  const Tensor b = random_tensor(rng, {1, 1, 1, 2});
  const Tensor zin = eval1([&](Graph& g) {
    return ops::fully_connected(g, g.constant(Tensor(x.shape())), g.constant(w), g.constant(b));
  });
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 2; ++j) CHECK(zin.at(0, 0, r, j) == b[static_cast<std::size_t>(j)]);
  const Tensor got = eval1([&](Graph& g) {
    return ops::fully_connected(g, g.constant(x), g.constant(w), g.constant(b));
  });
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 2; ++j) {
      double acc = b[static_cast<std::size_t>(j)];
      for (int i = 0; i < 4; ++i) acc += x.at(0, 0, r, i) * w.at(0, 0, i, j);
      CHECK(std::abs(got.at(0, 0, r, j) - acc) <= 1e-12);
    }
  Graph g;
  CHECK_THROWS_AS(ops::fully_connected(g, g.constant(x), g.constant(Tensor(Shape{1, 1, 3, 2})),
                                       g.constant(b)),
                  Error);
}

TEST_CASE("activations and elementwise ops") {
  CHECK(ops::sigmoid(0.0) == 0.5);
  // Phi(3) from a 30-digit evaluation of the Gaussian CDF.
  const double phi3 = 0.998650101968369905473348185903;
  CHECK(std::abs(ops::gelu(3.0) - 3.0 * phi3) <= 1e-10);
  CHECK(std::abs(ops::gelu(-3.0) - (-3.0) * (1.0 - phi3)) <= 1e-10);

  std::mt19937_64 rng(7);
  const Tensor a = random_tensor(rng, {1, 2, 3, 3});
  const Tensor b = random_tensor(rng, {1, 2, 3, 3});
  const Tensor c = random_tensor(rng, {1, 2, 3, 3});
  const Tensor ones(a.shape(), 1.0);
  auto mul = [&](const Tensor& p, const Tensor& q) {
    return eval1([&](Graph& g) { return ops::mul(g, g.constant(p), g.constant(q)); });
  };
  auto add = [&](const Tensor& p, const Tensor& q) {
    return eval1([&](Graph& g) { return ops::add(g, g.constant(p), g.constant(q)); });
  };
  CHECK(max_abs_diff(mul(a, ones), a) == 0.0);
  CHECK(max_abs_diff(mul(a, b), mul(b, a)) == 0.0);
  CHECK(max_abs_diff(add(add(a, b), c), add(a, add(b, c))) <= 1e-12);
  Graph g;
  CHECK_THROWS_AS(ops::add(g, g.constant(a), g.constant(Tensor(Shape{1, 2, 3, 2}))), Error);
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor(rng, {1, 1, 5, 16}, 3.0);
  const Tensor y = eval1([&](Graph& g) {
    return ops::layer_norm(g, g.constant(x), g.constant(Tensor(Shape{1, 1, 1, 16}, 1.0)),
                           g.constant(Tensor(Shape{1, 1, 1, 16})), 0.0);
  });
  for (int r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (int j = 0; j < 16; ++j) m += y.at(0, 0, r, j) / 16;
    for (int j = 0; j < 16; ++j) v += (y.at(0, 0, r, j) - m) * (y.at(0, 0, r, j) - m) / 16;
    CHECK(std::abs(m) <= 1e-12);
    CHECK(std::abs(v - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax of uniform logits is uniform; rows sum to one") {
  RowMatrix l = RowMatrix::Constant(3, 5, 0.7);
  const RowMatrix s = ops::softmax_rows(l);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) CHECK(s(i, j) == doctest::Approx(0.2).epsilon(1e-15));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) l(i, j) = nd(rng);
  const RowMatrix s2 = ops::softmax_rows(l);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s2.row(i).sum() - 1.0) <= 1e-14);
}

TEST_CASE("single-head attention on two tokens matches the closed form") {
  std::mt19937_64 rng(10);
  const int d = 3;
  const Tensor q = random_tensor(rng, {1, 1, 2, d});
  const Tensor k = random_tensor(rng, {1, 1, 2, d});
  const Tensor v = random_tensor(rng, {1, 1, 2, d});
  const Tensor got = eval1([&](Graph& g) {
    return ops::multihead_attention(g, g.constant(q), g.constant(k), g.constant(v), 1);
  });
  for (int i = 0; i < 2; ++i) {
    double s0 = 0, s1 = 0;
    for (int j = 0; j < d; ++j) {
      s0 += q.at(0, 0, i, j) * k.at(0, 0, 0, j);
      s1 += q.at(0, 0, i, j) * k.at(0, 0, 1, j);
    }
    // Two-way softmax is a logistic of the score difference.
    const double w0 = 1.0 / (1.0 + std::exp((s1 - s0) / std::sqrt(double(d))));
    for (int j = 0; j < d; ++j) {
      const double want = w0 * v.at(0, 0, 0, j) + (1 - w0) * v.at(0, 0, 1, j);
      CHECK(std::abs(got.at(0, 0, i, j) - want) <= 1e-10);
    }
  }
}

TEST_CASE("attention block preserves shape and rejects indivisible heads") {
  std::mt19937_64 rng(11);
  const int t = 16, d = 32;
  Graph g(false);
  auto c = [&](Shape s, double scale = 0.2) { return g.constant(random_tensor(rng, s, scale)); };
  const Shape vd{1, 1, 1, d}, dd{1, 1, d, d};
  const ops::AttentionParams p{c(vd), c(vd), c(dd), c(vd), c(dd), c(vd), c(dd), c(vd),
                               c(dd), c(vd), c(vd), c(vd), c({1, 1, d, 64}), c({1, 1, 1, 64}),
                               c({1, 1, 64, d}), c(vd)};
  const Var x = c({1, 1, t, d}, 1.0);
  CHECK(g.value(ops::attention_block(g, x, p, 4)).shape() == Shape{1, 1, t, d});
  CHECK_THROWS_AS(ops::attention_block(g, x, p, 5), Error);
}

TEST_CASE("avg pool and token reshapes") {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor(rng, {1, 2, 16, 16});
  const Tensor p = eval1([&](Graph& g) { return ops::avg_pool(g, g.constant(x), 2, 2); });
  REQUIRE(p.shape() == Shape{1, 2, 8, 8});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        const double want = (x.at(0, c, 2 * y, 2 * xx) + x.at(0, c, 2 * y, 2 * xx + 1) +
                             x.at(0, c, 2 * y + 1, 2 * xx) + x.at(0, c, 2 * y + 1, 2 * xx + 1)) /
                            4.0;
        CHECK(std::abs(p.at(0, c, y, xx) - want) <= 1e-12);
      }
  const Tensor g3 = random_tensor(rng, {1, 3, 2, 4});
  const Tensor back = eval1([&](Graph& g) {
    return ops::tokens_to_grid(g, ops::grid_to_tokens(g, g.constant(g3)), 2, 4);
  });
  CHECK(max_abs_diff(back, g3) == 0.0);
}

TEST_CASE("graph: reverse order, single backward, frozen params skipped") {
  Parameter w{"w", Tensor(Shape{1, 1, 1, 1}, 2.0), true};
  Parameter f{"f", Tensor(Shape{1, 1, 1, 1}, 3.0), false};
  Graph g;
  const Var x = g.constant(Tensor(Shape{1, 1, 1, 1}, 5.0));
  const Var a = ops::mul(g, x, g.parameter(w));
  const Var b = ops::add(g, a, g.parameter(f));
  const Var y = ops::activation(g, b, ops::Activation::relu);
  g.backward(y);
  CHECK(g.backward_trace() == std::vector<std::string>{"relu", "add", "mul"});
  CHECK(w.grad[0] == 5.0);
  CHECK(f.grad[0] == 0.0);
  CHECK_FALSE(g.needs_grad(x));
  CHECK_THROWS_AS(g.backward(y), Error);
  CHECK_THROWS_AS(g.record("bad", Tensor(Shape{1, 1, 1, 1}, NAN), {}, nullptr), Error);
}

TEST_CASE("grad_check: linear op is exact, sensitive to a corrupted rule") {
  std::mt19937_64 rng(13);
  const auto lin = [](Graph& g, std::span<const Var> v) {
    return ops::fully_connected(g, v[0], v[1], v[2]);
  };
  const GradCheckResult r = grad_check(
      lin, {random_tensor(rng, {1, 1, 3, 4}), random_tensor(rng, {1, 1, 4, 2}),
            random_tensor(rng, {1, 1, 1, 2})});
  CHECK(r.max_rel_error <= 1e-9);
  CHECK(r.checked == 12 + 8 + 2);

  Graph::corrupt_backward("fully_connected", 1.5);
  const GradCheckResult bad = grad_check(
      lin, {random_tensor(rng, {1, 1, 3, 4}), random_tensor(rng, {1, 1, 4, 2}),
            random_tensor(rng, {1, 1, 1, 2})});
  Graph::clear_corruption();
  CHECK(bad.max_rel_error > 0.1);
}

TEST_CASE("grad catalog: every op passes and is listed once") {
  const auto rows = catalog::run_gradcheck(1e-4);
  std::set<std::string> names;
  for (const auto& r : rows) {
    INFO(r.name << " " << r.result.max_rel_error << " at " << r.result.worst);
    CHECK(r.pass);
    CHECK(names.insert(r.name).second);
  }
  for (const char* op :
       {"conv2d_depthwise", "conv2d_strip_h", "conv2d_strip_v", "conv2d_pointwise", "conv2d",
        "conv_transpose2d", "fully_connected", "sigmoid", "gelu", "relu", "add", "mul",
        "layer_norm", "multihead_attention", "avg_pool", "grid_to_tokens", "tokens_to_grid",
        "patch_dct", "iou_loss", "fpg_pipeline", "mspg_pipeline"})
    CHECK(names.count(op) == 1);
}

TEST_CASE("grad catalog: corrupting one rule fails that row") {
  Graph::corrupt_backward("conv2d_pointwise", 1.5);
  const auto rows = catalog::run_gradcheck(1e-4);
  Graph::clear_corruption();
  for (const auto& r : rows)
    if (r.name == "conv2d_pointwise") CHECK_FALSE(r.pass);
    else if (r.name == "relu" || r.name == "gelu") CHECK(r.pass);
}
