#pragma once

#include <vector>

#include "wrtsam/graph.hpp"

// Differentiable layer catalog. Every op records one node on the graph with a
// hand-derived backward rule. Convolutions are cross-correlations with zero
// "same" padding unless stated otherwise.
namespace wrtsam::ops {

enum class Activation { sigmoid, gelu, relu };
enum class StripOrientation { horizontal, vertical };

/// Per-channel spatial convolution. kernel [C,1,kh,kw] with odd kh, kw; bias
/// has C entries.
Var conv2d_depthwise(Graph& g, Var input, Var kernel, Var bias);

/// Depthwise 1xk (horizontal, kernel [C,1,1,k]) or kx1 (vertical, kernel
/// [C,1,k,1]) convolution.
Var conv2d_strip(Graph& g, Var input, Var kernel, Var bias,
                 StripOrientation orientation);

/// 1x1 convolution: weights [C_out,C,1,1], bias C_out.
Var conv2d_pointwise(Graph& g, Var input, Var weights, Var bias);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// Dense convolution, weights [C_out,C_in,kh,kw]. With stride == kernel and no
/// padding this is a non-overlapping patch embedding.
Var conv2d(Graph& g, Var input, Var weights, Var bias, Conv2dOptions opt);

/// Transposed convolution with kernel == stride (non-overlapping upsampling).
/// weights [C_in,C_out,s,s], bias C_out. Output is [N,C_out,H*s,W*s].
Var conv_transpose2d(Graph& g, Var input, Var weights, Var bias);

/// rows x d_in times weights [d_in,d_out] plus bias d_out, per row.
Var fully_connected(Graph& g, Var input, Var weights, Var bias);

Var activation(Graph& g, Var input, Activation kind);
Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);

/// Per-row normalisation of a [rows,d] matrix with learned gain and shift.
Var layer_norm(Graph& g, Var input, Var gamma, Var beta, double eps = 1e-6);

/// Scaled dot-product attention split over `heads` on [T,d] q, k, v.
Var multihead_attention(Graph& g, Var q, Var k, Var v, int heads);

/// Block-mean pooling with non-overlapping fh x fw windows.
Var avg_pool(Graph& g, Var input, int fh, int fw);

/// [1,C,H,W] grid to [H*W, C] tokens (row-major over the grid) and back.
Var grid_to_tokens(Graph& g, Var grid);
Var tokens_to_grid(Graph& g, Var tokens, int h, int w);

/// Row-wise softmax of a [rows,cols] matrix (no graph).
RowMatrix softmax_rows(const RowMatrix& logits);

double gelu(double x);
double gelu_grad(double x);
double sigmoid(double x);

/// Weights of one pre-norm transformer block.
struct AttentionParams {
  Var ln1_gamma, ln1_beta;
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln2_gamma, ln2_beta;
  Var w1, b1, w2, b2;
};

/// x + Wo·MHA(LN1(x)) followed by x + W2·GELU(W1·LN2(x)). With
/// `attention == false` the attention half is skipped, leaving a purely
/// per-token block.
Var attention_block(Graph& g, Var tokens, const AttentionParams& p, int heads,
                    bool attention = true);

}  // namespace wrtsam::ops
