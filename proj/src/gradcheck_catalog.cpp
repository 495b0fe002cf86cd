#include "wrtsam/gradcheck_catalog.hpp"

#include <cmath>
#include <random>

#include "wrtsam/metrics.hpp"
#include "wrtsam/model.hpp"
#include "wrtsam/ops.hpp"
#include "wrtsam/prompt.hpp"

namespace wrtsam::catalog {

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape s, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t(s);
  for (double& v : t.values()) v = nd(rng);
  return t;
}

Tensor uniform_tensor(std::mt19937_64& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = ud(rng);
  return t;
}

// sum(out * R) with R drawn from a stream fixed per entry.
Var weighted(Graph& g, Var out, std::uint64_t salt) {
  std::mt19937_64 rng(salt);
  const Tensor r = uniform_tensor(rng, g.value(out).shape(), 0.5, 1.5);
  return ops::mul(g, out, g.constant(r));
}

Shape vec(int n) { return Shape{1, 1, 1, n}; }

}  // namespace

std::vector<Entry> gradcheck_entries(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Entry> e;
  std::uint64_t salt = seed * 1000;
  auto add = [&](std::string name, auto op, std::vector<Tensor> pts) {
    const std::uint64_t s = ++salt;
    e.push_back({std::move(name),
                 [op, s](Graph& g, std::span<const Var> v) { return weighted(g, op(g, v), s); },
                 std::move(pts)});
  };

  add("conv2d_depthwise",
      [](Graph& g, std::span<const Var> v) { return ops::conv2d_depthwise(g, v[0], v[1], v[2]); },
      {random_tensor(rng, {1, 2, 5, 6}), random_tensor(rng, {2, 1, 3, 5}),
       random_tensor(rng, vec(2))});
  add("conv2d_strip_h",
      [](Graph& g, std::span<const Var> v) {
        return ops::conv2d_strip(g, v[0], v[1], v[2], ops::StripOrientation::horizontal);
      },
      {random_tensor(rng, {1, 2, 4, 6}), random_tensor(rng, {2, 1, 1, 7}),
       random_tensor(rng, vec(2))});
  add("conv2d_strip_v",
      [](Graph& g, std::span<const Var> v) {
        return ops::conv2d_strip(g, v[0], v[1], v[2], ops::StripOrientation::vertical);
      },
      {random_tensor(rng, {1, 2, 6, 4}), random_tensor(rng, {2, 1, 7, 1}),
       random_tensor(rng, vec(2))});
  add("conv2d_pointwise",
      [](Graph& g, std::span<const Var> v) { return ops::conv2d_pointwise(g, v[0], v[1], v[2]); },
      {random_tensor(rng, {2, 3, 3, 4}), random_tensor(rng, {2, 3, 1, 1}),
       random_tensor(rng, vec(2))});
  add("conv2d",
      [](Graph& g, std::span<const Var> v) {
        return ops::conv2d(g, v[0], v[1], v[2], ops::Conv2dOptions{2, 1});
      },
      {random_tensor(rng, {1, 2, 6, 6}), random_tensor(rng, {3, 2, 3, 3}),
       random_tensor(rng, vec(3))});
  add("conv_transpose2d",
      [](Graph& g, std::span<const Var> v) { return ops::conv_transpose2d(g, v[0], v[1], v[2]); },
      {random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {2, 3, 2, 2}),
       random_tensor(rng, vec(3))});
  add("fully_connected",
      [](Graph& g, std::span<const Var> v) { return ops::fully_connected(g, v[0], v[1], v[2]); },
      {random_tensor(rng, {1, 1, 3, 4}), random_tensor(rng, {1, 1, 4, 5}),
       random_tensor(rng, vec(5))});
  add("sigmoid",
      [](Graph& g, std::span<const Var> v) {
        return ops::activation(g, v[0], ops::Activation::sigmoid);
      },
      {random_tensor(rng, {1, 2, 3, 3}, 2.0)});
  add("gelu",
      [](Graph& g, std::span<const Var> v) { return ops::activation(g, v[0], ops::Activation::gelu); },
      {random_tensor(rng, {1, 2, 3, 3}, 2.0)});
  {
    // Keep ReLU inputs away from the kink, where the derivative is undefined.
    Tensor x = random_tensor(rng, {1, 2, 3, 3});
    for (double& v : x.values())
      if (std::abs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
    add("relu",
        [](Graph& g, std::span<const Var> v) {
          return ops::activation(g, v[0], ops::Activation::relu);
        },
        {x});
  }
  add("add", [](Graph& g, std::span<const Var> v) { return ops::add(g, v[0], v[1]); },
      {random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {1, 2, 3, 3})});
  add("mul", [](Graph& g, std::span<const Var> v) { return ops::mul(g, v[0], v[1]); },
      {random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {1, 2, 3, 3})});
  add("layer_norm",
      [](Graph& g, std::span<const Var> v) { return ops::layer_norm(g, v[0], v[1], v[2]); },
      {random_tensor(rng, {1, 1, 3, 5}), random_tensor(rng, vec(5)), random_tensor(rng, vec(5))});
  add("multihead_attention",
      [](Graph& g, std::span<const Var> v) {
        return ops::multihead_attention(g, v[0], v[1], v[2], 2);
      },
      {random_tensor(rng, {1, 1, 4, 6}), random_tensor(rng, {1, 1, 4, 6}),
       random_tensor(rng, {1, 1, 4, 6})});
  add("avg_pool", [](Graph& g, std::span<const Var> v) { return ops::avg_pool(g, v[0], 2, 2); },
      {random_tensor(rng, {1, 2, 4, 6})});
  add("grid_to_tokens",
      [](Graph& g, std::span<const Var> v) { return ops::grid_to_tokens(g, v[0]); },
      {random_tensor(rng, {1, 3, 2, 2})});
  add("tokens_to_grid",
      [](Graph& g, std::span<const Var> v) { return ops::tokens_to_grid(g, v[0], 2, 2); },
      {random_tensor(rng, {1, 1, 4, 3})});
  add("patch_dct",
      [](Graph& g, std::span<const Var> v) {
        return dct::patch_dct(g, v[0], dct::frequency_plan(dct::PlanMode::top, 3, 4),
                              dct::HalfShift::spatial);
      },
      {random_tensor(rng, {1, 1, 8, 8})});
  {
    Tensor gt(Shape{1, 1, 4, 4});
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = (i % 3 == 0) ? 1.0 : 0.0;
    // Loss is a scalar, so no output weighting.
    e.push_back({"iou_loss",
                 [gt](Graph& g, std::span<const Var> v) { return metrics::iou_loss(g, v[0], gt); },
                 {uniform_tensor(rng, {1, 1, 4, 4}, 0.1, 0.9)}});
  }
  {
    std::vector<Tensor> pts{random_tensor(rng, {1, 1, 4, 6})};
    for (int i = 0; i < 16; ++i) {
      Shape s;
      switch (i) {
        case 0: case 1: case 10: case 11: s = vec(6); break;
        case 2: case 4: case 6: case 8: s = {1, 1, 6, 6}; break;
        case 3: case 5: case 7: case 9: s = vec(6); break;
        case 12: s = {1, 1, 6, 8}; break;
        case 13: s = vec(8); break;
        case 14: s = {1, 1, 8, 6}; break;
        default: s = vec(6); break;
      }
      pts.push_back(random_tensor(rng, s, 0.5));
    }
    for (int i : {1, 11}) pts[static_cast<std::size_t>(i)] = uniform_tensor(rng, vec(6), 0.5, 1.5);
    add("attention_block",
        [](Graph& g, std::span<const Var> v) {
          const ops::AttentionParams p{v[1],  v[2],  v[3],  v[4],  v[5],  v[6],
                                       v[7],  v[8],  v[9],  v[10], v[11], v[12],
                                       v[13], v[14], v[15], v[16]};
          return ops::attention_block(g, v[0], p, 2);
        },
        std::move(pts));
  }
  add("adapter",
      [](Graph& g, std::span<const Var> v) {
        return model::adapter_apply(g, v[0], v[1], v[2], v[3], v[4], v[5]);
      },
      {random_tensor(rng, {1, 1, 4, 6}), random_tensor(rng, {1, 1, 4, 6}),
       random_tensor(rng, {1, 1, 6, 3}), random_tensor(rng, vec(3)),
       random_tensor(rng, {1, 1, 3, 6}), random_tensor(rng, vec(6))});
  {
    prompt::FpgConfig cfg;
    cfg.plan = dct::frequency_plan(dct::PlanMode::top, 2, 4);
    cfg.d_mid = 3;
    cfg.d_p = 4;
    cfg.conv_kernel = 3;
    add("fpg_pipeline",
        [cfg](Graph& g, std::span<const Var> v) {
          return prompt::fpg_forward(g, v[0], cfg, prompt::FpgParams{v[1], v[2], v[3], v[4]});
        },
        {random_tensor(rng, {1, 1, 12, 8}), random_tensor(rng, {3, 2, 1, 1}),
         random_tensor(rng, vec(3)), random_tensor(rng, {4, 3, 3, 3}),
         random_tensor(rng, vec(4))});
  }
  {
    prompt::MspgConfig cfg;
    cfg.channels = 2;
    std::vector<Tensor> pts{random_tensor(rng, {1, 2, 8, 8}), random_tensor(rng, {2, 1, 5, 5}),
                            random_tensor(rng, vec(2))};
    for (int k : cfg.branch_kernels) {
      pts.push_back(random_tensor(rng, {2, 1, 1, k}, 0.3));
      pts.push_back(random_tensor(rng, vec(2)));
      pts.push_back(random_tensor(rng, {2, 1, k, 1}, 0.3));
      pts.push_back(random_tensor(rng, vec(2)));
    }
    pts.push_back(random_tensor(rng, {2, 2, 1, 1}));
    pts.push_back(random_tensor(rng, vec(2)));
    add("mspg_pipeline",
        [cfg](Graph& g, std::span<const Var> v) {
          prompt::MspgParams p;
          p.dconv_w = v[1];
          p.dconv_b = v[2];
          std::size_t i = 3;
          for (std::size_t b = 0; b < cfg.branch_kernels.size(); ++b, i += 4)
            p.branches.push_back({v[i], v[i + 1], v[i + 2], v[i + 3]});
          p.mix_w = v[i];
          p.mix_b = v[i + 1];
          return prompt::mspg_forward(g, v[0], cfg, p);
        },
        std::move(pts));
  }
  add("mspg_to_prompt",
      [](Graph& g, std::span<const Var> v) {
        return prompt::mspg_to_prompt(g, v[0], v[1], v[2], 2, 2);
      },
      {random_tensor(rng, {1, 3, 8, 8}), random_tensor(rng, {4, 3, 1, 1}),
       random_tensor(rng, vec(4))});
  return e;
}

std::vector<Row> run_gradcheck(double tolerance, std::uint64_t seed) {
  std::vector<Row> rows;
  for (Entry& e : gradcheck_entries(seed)) {
    Row r;
    r.name = e.name;
    r.result = grad_check(e.build, std::move(e.points));
    r.pass = r.result.max_rel_error <= tolerance;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace wrtsam::catalog
