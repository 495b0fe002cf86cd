#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "wrtsam/prompt.hpp"

using namespace wrtsam;
using namespace wrtsam::prompt;
using wrtsam::test::random_tensor;

namespace {

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

Tensor naive_pointwise(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape s = x.shape();
  const int co = w.shape().n;
  Tensor out(Shape{s.n, co, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < s.c; ++c) acc += w.at(o, c, 0, 0) * x.at(n, c, y, xx);
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

struct MspgTensors {
  Tensor dconv_w, dconv_b;
  std::vector<std::array<Tensor, 4>> branches;
  Tensor mix_w, mix_b;
};

MspgTensors random_mspg(std::mt19937_64& rng, int c, const MspgConfig& cfg) {
  MspgTensors t{random_tensor(rng, {c, 1, 5, 5}), random_tensor(rng, {1, 1, 1, c}), {},
                random_tensor(rng, {c, c, 1, 1}), random_tensor(rng, {1, 1, 1, c})};
  for (int k : cfg.branch_kernels)
    t.branches.push_back({random_tensor(rng, {c, 1, 1, k}, 0.3), random_tensor(rng, {1, 1, 1, c}),
                          random_tensor(rng, {c, 1, k, 1}, 0.3), random_tensor(rng, {1, 1, 1, c})});
  return t;
}

Tensor run_mspg(const Tensor& x, const MspgConfig& cfg, const MspgTensors& t) {
  Graph g(false);
  MspgParams p;
  p.dconv_w = g.constant(t.dconv_w);
  p.dconv_b = g.constant(t.dconv_b);
  for (const auto& b : t.branches)
    p.branches.push_back({g.constant(b[0]), g.constant(b[1]), g.constant(b[2]), g.constant(b[3])});
  p.mix_w = g.constant(t.mix_w);
  p.mix_b = g.constant(t.mix_b);
  return g.value(mspg_forward(g, g.constant(x), cfg, p));
}

Tensor delta_kernel(int c, int kh, int kw) {
  Tensor k(Shape{c, 1, kh, kw});
  for (int i = 0; i < c; ++i) k.at(i, 0, kh / 2, kw / 2) = 1.0;
  return k;
}

FpgParams fpg_params(Graph& g, std::mt19937_64& rng, int k, int d_mid, int d_p, int kk,
                     bool zero_bias) {
  auto bias = [&](int n) {
    return g.constant(zero_bias ? Tensor(Shape{1, 1, 1, n}) : random_tensor(rng, {1, 1, 1, n}));
  };
  return FpgParams{g.constant(random_tensor(rng, {d_mid, k, 1, 1})), bias(d_mid),
                   g.constant(random_tensor(rng, {d_p, d_mid, kk, kk})), bias(d_p)};
}

}  // namespace

TEST_CASE("FPG: zero image gives zero prompt; shape arithmetic") {
  std::mt19937_64 rng(31);
  FpgConfig cfg;
  cfg.plan = dct::frequency_plan(dct::PlanMode::top, 1, 8);
  cfg.d_mid = 8;
  cfg.d_p = 16;
  Graph g(false);
  const FpgParams p = fpg_params(g, rng, 1, 8, 16, 1, true);
  const Tensor zero = g.value(fpg_forward(g, g.constant(Tensor(Shape{1, 1, 64, 64})), cfg, p));
  CHECK(zero.shape() == Shape{1, 16, 8, 8});
  CHECK(max_abs_diff(zero, Tensor(zero.shape())) == 0.0);
}

TEST_CASE("FPG: constant image gives a spatially constant prompt") {
  std::mt19937_64 rng(32);
  FpgConfig cfg;
  cfg.plan = dct::frequency_plan(dct::PlanMode::top, 1, 4);
  cfg.d_mid = 6;
  cfg.d_p = 5;
  Graph g(false);
  const FpgParams p = fpg_params(g, rng, 1, 6, 5, 1, false);
  const Tensor out = g.value(fpg_forward(g, g.constant(Tensor(Shape{1, 1, 16, 12}, 0.3)), cfg, p));
  for (int c = 0; c < 5; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 3; ++x) CHECK(out.at(0, c, y, x) == out.at(0, c, 0, 0));
}

TEST_CASE("FPG: only the selected coefficients of each patch matter") {
  // A patch with its content permuted by a flip about the patch centre keeps
  // its (0,0) coefficient, so the top-1 prompt cannot change.
  std::mt19937_64 rng(33);
  FpgConfig cfg;
  cfg.plan = dct::frequency_plan(dct::PlanMode::top, 1, 4);
  cfg.d_mid = 4;
  cfg.d_p = 3;
  const Tensor img = random_tensor(rng, {1, 1, 8, 8});
  Tensor flipped(img.shape());
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      flipped.at(0, 0, y, x) = img.at(0, 0, (y / 4) * 4 + 3 - y % 4, (x / 4) * 4 + 3 - x % 4);
  Graph g(false);
  const FpgParams p = fpg_params(g, rng, 1, 4, 3, 1, false);
  const Tensor a = g.value(fpg_forward(g, g.constant(img), cfg, p));
  const Tensor b = g.value(fpg_forward(g, g.constant(flipped), cfg, p));
  CHECK(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("FPG errors: divisibility and plan mismatch") {
  std::mt19937_64 rng(34);
  FpgConfig cfg;
  cfg.plan = dct::frequency_plan(dct::PlanMode::top, 2, 4);
  cfg.d_mid = 4;
  cfg.d_p = 3;
  Graph g(false);
  const FpgParams ok = fpg_params(g, rng, 2, 4, 3, 1, false);
  CHECK_THROWS_AS(fpg_forward(g, g.constant(Tensor(Shape{1, 1, 10, 8})), cfg, ok), Error);
  const FpgParams bad = fpg_params(g, rng, 3, 4, 3, 1, false);
  CHECK_THROWS_AS(fpg_forward(g, g.constant(Tensor(Shape{1, 1, 8, 8})), cfg, bad), Error);
}

TEST_CASE("MSPG: zero mixing annihilates") {
  std::mt19937_64 rng(35);
  const MspgConfig cfg;
  MspgTensors t = random_mspg(rng, 3, cfg);
  t.mix_w = Tensor(t.mix_w.shape());
  t.mix_b = Tensor(t.mix_b.shape());
  const Tensor out = run_mspg(random_tensor(rng, {1, 3, 9, 9}), cfg, t);
  CHECK(max_abs_diff(out, Tensor(out.shape())) == 0.0);
}

TEST_CASE("MSPG: identity kernels give the elementwise square") {
  std::mt19937_64 rng(36);
  const MspgConfig cfg;
  const int c = 2;
  MspgTensors t = random_mspg(rng, c, cfg);
  t.dconv_w = delta_kernel(c, 5, 5);
  t.dconv_b = Tensor(Shape{1, 1, 1, c});
  for (std::size_t i = 0; i < cfg.branch_kernels.size(); ++i) {
    const int k = cfg.branch_kernels[i];
    t.branches[i] = {delta_kernel(c, 1, k), Tensor(Shape{1, 1, 1, c}), delta_kernel(c, k, 1),
                     Tensor(Shape{1, 1, 1, c})};
  }
  t.mix_w = Tensor(Shape{c, c, 1, 1});
  for (int i = 0; i < c; ++i) t.mix_w.at(i, i, 0, 0) = 0.25;
  t.mix_b = Tensor(Shape{1, 1, 1, c});
  const Tensor x = random_tensor(rng, {1, c, 6, 7});
  const Tensor out = run_mspg(x, cfg, t);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(out[i] - x[i] * x[i]) <= 1e-12);
}

TEST_CASE("MSPG matches a dense separable-kernel oracle") {
  std::mt19937_64 rng(37);
  const MspgConfig cfg;
  for (int trial = 0; trial < 3; ++trial) {
    const int c = 2 + trial;
    const MspgTensors t = random_mspg(rng, c, cfg);
    const Tensor x = random_tensor(rng, {1, c, 12, 10});
    const Tensor local = naive_depthwise(x, t.dconv_w, t.dconv_b);
    Tensor total = local;
    for (std::size_t i = 0; i < cfg.branch_kernels.size(); ++i) {
      const int k = cfg.branch_kernels[i];
      const auto& [hw, hb, vw, vb] = t.branches[i];
      Tensor dense(Shape{c, 1, k, k});
      for (int ch = 0; ch < c; ++ch)
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b) dense.at(ch, 0, a, b) = vw.at(ch, 0, a, 0) * hw.at(ch, 0, 0, b);
      // The horizontal bias is a constant map that the vertical strip then
      // filters with zero padding.
      Tensor bias_map(x.shape());
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < x.shape().h; ++y)
          for (int xx = 0; xx < x.shape().w; ++xx)
            bias_map.at(0, ch, y, xx) = hb[static_cast<std::size_t>(ch)];
      total = total + naive_depthwise(local, dense, Tensor(Shape{1, 1, 1, c})) +
              naive_depthwise(bias_map, vw, vb);
    }
    const Tensor attn = naive_pointwise(total, t.mix_w, t.mix_b);
    Tensor want(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) want[i] = attn[i] * x[i];
    CHECK(max_abs_diff(run_mspg(x, cfg, t), want) <= 1e-10);
  }
}

TEST_CASE("MSPG rejects a channel mismatch") {
  std::mt19937_64 rng(38);
  const MspgConfig cfg;
  CHECK_THROWS_AS(run_mspg(random_tensor(rng, {1, 3, 8, 8}), cfg, random_mspg(rng, 2, cfg)), Error);
}

TEST_CASE("mspg_to_prompt: pass-through, constant input, block-mean oracle") {
  std::mt19937_64 rng(39);
  Tensor eye(Shape{3, 3, 1, 1});
  for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0) = 1.0;
  const Tensor x = random_tensor(rng, {1, 3, 4, 4});
  {
    Graph g(false);
    const Tensor out = g.value(mspg_to_prompt(g, g.constant(x), g.constant(eye),
                                              g.constant(Tensor(Shape{1, 1, 1, 3})), 4, 4));
    CHECK(max_abs_diff(out, x) == 0.0);
  }
  {
    const Tensor w = random_tensor(rng, {2, 3, 1, 1});
    const Tensor b = random_tensor(rng, {1, 1, 1, 2});
    Graph g(false);
    const Tensor out = g.value(mspg_to_prompt(g, g.constant(Tensor(Shape{1, 3, 8, 8}, 0.4)),
                                              g.constant(w), g.constant(b), 2, 2));
    for (int o = 0; o < 2; ++o) {
      const double want = 0.4 * (w.at(o, 0, 0, 0) + w.at(o, 1, 0, 0) + w.at(o, 2, 0, 0)) +
                          b[static_cast<std::size_t>(o)];
      for (int y = 0; y < 2; ++y)
        for (int xx = 0; xx < 2; ++xx) CHECK(std::abs(out.at(0, o, y, xx) - want) <= 1e-12);
    }
  }
  {
    const Tensor big = random_tensor(rng, {1, 3, 16, 16});
    Graph g(false);
    const Tensor out = g.value(mspg_to_prompt(g, g.constant(big), g.constant(eye),
                                              g.constant(Tensor(Shape{1, 1, 1, 3})), 8, 8));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) {
          double m = 0;
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) m += big.at(0, c, 2 * y + i, 2 * xx + j) / 4;
          CHECK(std::abs(out.at(0, c, y, xx) - m) <= 1e-12);
        }
  }
  Graph g(false);
  CHECK_THROWS_AS(mspg_to_prompt(g, g.constant(Tensor(Shape{1, 3, 10, 10})), g.constant(eye),
                                 g.constant(Tensor(Shape{1, 1, 1, 3})), 4, 4),
                  Error);
}

TEST_CASE("sum_prompts: identity, commutativity, elementwise oracle, mismatch") {
  std::mt19937_64 rng(40);
  const Tensor a = random_tensor(rng, {1, 4, 3, 3});
  const Tensor b = random_tensor(rng, {1, 4, 3, 3});
  Graph g(false);
  const Var va = g.constant(a), vb = g.constant(b);
  CHECK(max_abs_diff(g.value(sum_prompts(g, va, g.constant(Tensor(a.shape())))), a) == 0.0);
  CHECK(max_abs_diff(g.value(sum_prompts(g, va, vb)), g.value(sum_prompts(g, vb, va))) == 0.0);
  const Tensor s = g.value(sum_prompts(g, va, vb));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(s[i] == a[i] + b[i]);
  CHECK_THROWS_AS(sum_prompts(g, va, g.constant(Tensor(Shape{1, 4, 3, 2}))), Error);
}
