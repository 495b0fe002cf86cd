#include "wrtsam/prompt.hpp"

namespace wrtsam::prompt {

using ops::StripOrientation;

Var fpg_forward(Graph& g, Var image, const FpgConfig& cfg, const FpgParams& p) {
  const Shape s = g.value(image).shape();
  if (s.h % cfg.patch() != 0 || s.w % cfg.patch() != 0)
    throw Error("fpg_forward: image " + std::to_string(s.h) + "x" +
                std::to_string(s.w) + " not divisible by patch " +
                std::to_string(cfg.patch()));
  if (g.value(p.fc_w).shape().c != cfg.plan.groups())
    throw Error("fpg_forward: fc weights " + g.value(p.fc_w).shape().str() +
                " do not match the " + std::to_string(cfg.plan.groups()) +
                "-entry frequency plan");
  const Var coeffs = dct::patch_dct(g, image, cfg.plan, cfg.half_shift);
  const Var mapped = ops::conv2d_pointwise(g, coeffs, p.fc_w, p.fc_b);
  if (cfg.conv_kernel == 1)
    return ops::conv2d_pointwise(g, mapped, p.embed_w, p.embed_b);
  return ops::conv2d(g, mapped, p.embed_w, p.embed_b,
                     ops::Conv2dOptions{1, cfg.conv_kernel / 2});
}

Var mspg_forward(Graph& g, Var features, const MspgConfig& cfg,
                 const MspgParams& p) {
  const int c = g.value(features).shape().c;
  if (g.value(p.dconv_w).shape().n != c || g.value(p.mix_w).shape().c != c)
    throw Error("mspg_forward: parameters built for " +
                std::to_string(g.value(p.dconv_w).shape().n) +
                " channels, features have " + std::to_string(c));
  if (p.branches.size() != cfg.branch_kernels.size())
    throw Error("mspg_forward: branch parameter count mismatch");

  const Var local = ops::conv2d_depthwise(g, features, p.dconv_w, p.dconv_b);
  Var total = local;  // Scale_0
  for (const StripBranch& b : p.branches) {
    const Var h = ops::conv2d_strip(g, local, b.h_w, b.h_b,
                                    StripOrientation::horizontal);
    const Var v = ops::conv2d_strip(g, h, b.v_w, b.v_b, StripOrientation::vertical);
    total = ops::add(g, total, v);
  }
  const Var attn = ops::conv2d_pointwise(g, total, p.mix_w, p.mix_b);
  return ops::mul(g, attn, features);
}

Var mspg_to_prompt(Graph& g, Var attended, Var proj_w, Var proj_b, int token_h,
                   int token_w) {
  const Shape s = g.value(attended).shape();
  if (token_h < 1 || token_w < 1 || s.h % token_h != 0 || s.w % token_w != 0)
    throw Error("mspg_to_prompt: " + std::to_string(s.h) + "x" +
                std::to_string(s.w) + " cannot pool to " +
                std::to_string(token_h) + "x" + std::to_string(token_w));
  Var pooled = attended;
  if (s.h != token_h || s.w != token_w)
    pooled = ops::avg_pool(g, attended, s.h / token_h, s.w / token_w);
  return ops::conv2d_pointwise(g, pooled, proj_w, proj_b);
}

Var sum_prompts(Graph& g, Var p_f, Var p_ms) {
  if (!(g.value(p_f).shape() == g.value(p_ms).shape()))
    throw Error("sum_prompts: shape mismatch " + g.value(p_f).shape().str() +
                " vs " + g.value(p_ms).shape().str());
  return ops::add(g, p_f, p_ms);
}

}  // namespace wrtsam::prompt
