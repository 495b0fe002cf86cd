#pragma once

#include <vector>

#include "wrtsam/dct.hpp"
#include "wrtsam/ops.hpp"

namespace wrtsam::prompt {

/// Frequency prompt generator settings.
struct FpgConfig {
  dct::FrequencyIndexPlan plan = dct::frequency_plan(dct::PlanMode::top, 1, 4);
  int d_mid = 32;
  int d_p = 64;
  int conv_kernel = 1;  // embedding conv: 1 (default) or 3
  dct::HalfShift half_shift = dct::HalfShift::spatial;

  int patch() const { return plan.grid; }
};

struct FpgParams {
  Var fc_w, fc_b;      // [d_mid,k,1,1], d_mid
  Var embed_w, embed_b;  // [d_p,d_mid,kk,kk], d_p
};

/// Image [N,1,H,W] -> frequency prompt grid [N,d_p,H/P,W/P]:
/// per-patch DCT coefficients, a per-cell fully connected map over the
/// coefficient axis, then the embedding convolution.
Var fpg_forward(Graph& g, Var image, const FpgConfig& cfg, const FpgParams& p);

struct StripBranch {
  Var h_w, h_b;  // [C,1,1,k]
  Var v_w, v_b;  // [C,1,k,1]
};

/// Multi-scale prompt generator settings.
struct MspgConfig {
  int dconv_kernel = 5;
  std::vector<int> branch_kernels{7, 11, 21};
  int channels = 16;
};

struct MspgParams {
  Var dconv_w, dconv_b;  // [C,1,5,5]
  std::vector<StripBranch> branches;
  Var mix_w, mix_b;  // [C,C,1,1]
};

/// (Conv1x1(sum_i Scale_i(Dconv(X)))) * X, with Scale_0 the identity and
/// Scale_i a 1xk then kx1 depthwise strip pair.
Var mspg_forward(Graph& g, Var features, const MspgConfig& cfg,
                 const MspgParams& p);

/// Average-pools [N,C,Hs,Ws] to the token grid and projects C -> d_p.
Var mspg_to_prompt(Graph& g, Var attended, Var proj_w, Var proj_b,
                   int token_h, int token_w);

/// Elementwise sum of two prompt grids of identical shape.
Var sum_prompts(Graph& g, Var p_f, Var p_ms);

}  // namespace wrtsam::prompt
