#include "wrtsam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace wrtsam::ops {

namespace {

Var next_var(const Graph& g) { return Var{g.size()}; }

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      a.shape().str() + " vs " +
                                      b.shape().str());
}

// Adds `src` into `dst` (same size).
void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// out[n,c] += conv(in[n,c], k[c]) with zero padding, all channels.
// When `transpose` is set the kernel is applied as the adjoint (used for the
// input gradient).
void depthwise_correlate(const Tensor& in, const Tensor& k, Tensor& out,
                         bool transpose) {
  const Shape s = in.shape();
  const int kh = k.shape().h, kw = k.shape().w;
  const int ph = kh / 2, pw = kw / 2;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          const double kv = k.at(c, 0, i, j);
          if (kv == 0.0) continue;
          // forward: out[y,x] += in[y+i-ph, x+j-pw]·kv
          // adjoint: out[y+i-ph, x+j-pw] += in[y,x]·kv
          const int dy = transpose ? -(i - ph) : (i - ph);
          const int dx = transpose ? -(j - pw) : (j - pw);
          const int y0 = std::max(0, -dy), y1 = std::min(s.h, s.h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(s.w, s.w - dx);
          for (int y = y0; y < y1; ++y) {
            const double* src = &in.at(n, c, y + dy, 0);
            double* dst = &out.at(n, c, y, 0);
            for (int x = x0; x < x1; ++x) dst[x] += src[x + dx] * kv;
          }
        }
}

// im2col for one image: rows = C*kh*kw, cols = Ho*Wo.
RowMatrix im2col(const Tensor& x, int n, int kh, int kw, Conv2dOptions opt,
                 int ho, int wo) {
  const Shape s = x.shape();
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(s.c) * kh * kw,
                                  static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < s.c; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const Eigen::Index r = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
        for (int y = 0; y < ho; ++y) {
          const int iy = y * opt.stride + i - opt.padding;
          if (iy < 0 || iy >= s.h) continue;
          for (int xo = 0; xo < wo; ++xo) {
            const int ix = xo * opt.stride + j - opt.padding;
            if (ix < 0 || ix >= s.w) continue;
            col(r, static_cast<Eigen::Index>(y) * wo + xo) = x.at(n, c, iy, ix);
          }
        }
      }
  return col;
}

void col2im(const RowMatrix& col, Tensor& gx, int n, int kh, int kw,
            Conv2dOptions opt, int ho, int wo) {
  const Shape s = gx.shape();
  for (int c = 0; c < s.c; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const Eigen::Index r = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
        for (int y = 0; y < ho; ++y) {
          const int iy = y * opt.stride + i - opt.padding;
          if (iy < 0 || iy >= s.h) continue;
          for (int xo = 0; xo < wo; ++xo) {
            const int ix = xo * opt.stride + j - opt.padding;
            if (ix < 0 || ix >= s.w) continue;
            gx.at(n, c, iy, ix) += col(r, static_cast<Eigen::Index>(y) * wo + xo);
          }
        }
      }
}

ConstMatrixMap image_matrix(const Tensor& t, int n) {
  const Shape s = t.shape();
  return ConstMatrixMap(t.data() + static_cast<std::size_t>(n) * s.c * s.h * s.w,
                        s.c, static_cast<Eigen::Index>(s.h) * s.w);
}

MatrixMap image_matrix(Tensor& t, int n) {
  const Shape s = t.shape();
  return MatrixMap(t.data() + static_cast<std::size_t>(n) * s.c * s.h * s.w,
                   s.c, static_cast<Eigen::Index>(s.h) * s.w);
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

Var depthwise_node(Graph& g, Var input, Var kernel, Var bias, const char* name) {
  const Tensor& x = g.value(input);
  const Tensor& k = g.value(kernel);
  const Tensor& b = g.value(bias);
  const Shape s = x.shape();
  require(k.shape().n == s.c && k.shape().c == 1,
          "conv2d_depthwise: kernel " + k.shape().str() +
              " does not match input channels " + std::to_string(s.c));
  require(k.shape().h % 2 == 1 && k.shape().w % 2 == 1,
          "conv2d_depthwise: kernel size must be odd, got " + k.shape().str());
  require(b.size() == static_cast<std::size_t>(s.c),
          "conv2d_depthwise: bias length mismatch");

  Tensor out(s);
  depthwise_correlate(x, k, out, false);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double* p = &out.at(n, c, 0, 0);
      for (int i = 0; i < s.h * s.w; ++i) p[i] += b[c];
    }

  const Var out_var = next_var(g);
  return g.record(name, std::move(out), {input, kernel, bias},
                  [=](Graph& gr) {
                    const Tensor& go = gr.grad(out_var);
                    const Tensor& xv = gr.value(input);
                    const Tensor& kv = gr.value(kernel);
                    const Shape sh = xv.shape();
                    const int kh = kv.shape().h, kw = kv.shape().w;
                    const int ph = kh / 2, pw = kw / 2;
                    if (gr.needs_grad(input))
                      depthwise_correlate(go, kv, gr.grad(input), true);
                    if (gr.needs_grad(kernel)) {
                      Tensor& gk = gr.grad(kernel);
                      for (int n = 0; n < sh.n; ++n)
                        for (int c = 0; c < sh.c; ++c)
                          for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                              const int dy = i - ph, dx = j - pw;
                              const int y0 = std::max(0, -dy),
                                        y1 = std::min(sh.h, sh.h - dy);
                              const int x0 = std::max(0, -dx),
                                        x1 = std::min(sh.w, sh.w - dx);
                              double acc = 0.0;
                              for (int y = y0; y < y1; ++y) {
                                const double* src = &xv.at(n, c, y + dy, 0);
                                const double* gp = &go.at(n, c, y, 0);
                                for (int xx = x0; xx < x1; ++xx)
                                  acc += gp[xx] * src[xx + dx];
                              }
                              gk.at(c, 0, i, j) += acc;
                            }
                    }
                    if (gr.needs_grad(bias)) {
                      Tensor& gb = gr.grad(bias);
                      for (int n = 0; n < sh.n; ++n)
                        for (int c = 0; c < sh.c; ++c) {
                          const double* gp = &go.at(n, c, 0, 0);
                          double acc = 0.0;
                          for (int i = 0; i < sh.h * sh.w; ++i) acc += gp[i];
                          gb[c] += acc;
                        }
                    }
                  });
}

}  // namespace

Var conv2d_depthwise(Graph& g, Var input, Var kernel, Var bias) {
  return depthwise_node(g, input, kernel, bias, "conv2d_depthwise");
}

Var conv2d_strip(Graph& g, Var input, Var kernel, Var bias,
                 StripOrientation orientation) {
  const Shape ks = g.value(kernel).shape();
  const int len = orientation == StripOrientation::horizontal ? ks.w : ks.h;
  const int other = orientation == StripOrientation::horizontal ? ks.h : ks.w;
  require(other == 1, "conv2d_strip: kernel " + ks.str() +
                          " is not a strip for the requested orientation");
  require(len % 2 == 1,
          "conv2d_strip: strip length must be odd, got " + std::to_string(len));
  return depthwise_node(g, input, kernel, bias,
                        orientation == StripOrientation::horizontal ? "conv2d_strip_h"
                                                                    : "conv2d_strip_v");
}

Var conv2d_pointwise(Graph& g, Var input, Var weights, Var bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weights);
  const Tensor& b = g.value(bias);
  const Shape s = x.shape();
  const Shape ws = w.shape();
  require(ws.c == s.c && ws.h == 1 && ws.w == 1,
          "conv2d_pointwise: weights " + ws.str() +
              " do not match input channels " + std::to_string(s.c));
  require(b.size() == static_cast<std::size_t>(ws.n),
          "conv2d_pointwise: bias length mismatch");

  Tensor out(Shape{s.n, ws.n, s.h, s.w});
  const ConstMatrixMap wm(w.data(), ws.n, ws.c);
  const Eigen::Map<const Eigen::VectorXd> bv(b.data(), ws.n);
  for (int n = 0; n < s.n; ++n) {
    auto om = image_matrix(out, n);
    om.noalias() = wm * image_matrix(x, n);
    om.colwise() += bv;
  }

  const Var out_var = next_var(g);
  return g.record("conv2d_pointwise", std::move(out), {input, weights, bias},
                  [=](Graph& gr) {
                    const Tensor& go = gr.grad(out_var);
                    const Tensor& xv = gr.value(input);
                    const Tensor& wv = gr.value(weights);
                    const Shape wsh = wv.shape();
                    const ConstMatrixMap wmat(wv.data(), wsh.n, wsh.c);
                    for (int n = 0; n < xv.shape().n; ++n) {
                      const auto gom = image_matrix(go, n);
                      if (gr.needs_grad(input))
                        image_matrix(gr.grad(input), n).noalias() +=
                            wmat.transpose() * gom;
                      if (gr.needs_grad(weights)) {
                        MatrixMap gw(gr.grad(weights).data(), wsh.n, wsh.c);
                        gw.noalias() += gom * image_matrix(xv, n).transpose();
                      }
                      if (gr.needs_grad(bias)) {
                        Eigen::Map<Eigen::VectorXd> gb(gr.grad(bias).data(), wsh.n);
                        gb += gom.rowwise().sum();
                      }
                    }
                  });
}

Var conv2d(Graph& g, Var input, Var weights, Var bias, Conv2dOptions opt) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weights);
  const Tensor& b = g.value(bias);
  const Shape s = x.shape();
  const Shape ws = w.shape();
  require(ws.c == s.c, "conv2d: weights " + ws.str() +
                           " do not match input channels " + std::to_string(s.c));
  require(opt.stride >= 1 && opt.padding >= 0, "conv2d: invalid stride/padding");
  require(b.size() == static_cast<std::size_t>(ws.n), "conv2d: bias length mismatch");
  const int ho = (s.h + 2 * opt.padding - ws.h) / opt.stride + 1;
  const int wo = (s.w + 2 * opt.padding - ws.w) / opt.stride + 1;
  require(ho > 0 && wo > 0, "conv2d: kernel larger than padded input");

  Tensor out(Shape{s.n, ws.n, ho, wo});
  const ConstMatrixMap wm(w.data(), ws.n, static_cast<Eigen::Index>(ws.c) * ws.h * ws.w);
  const Eigen::Map<const Eigen::VectorXd> bv(b.data(), ws.n);
  for (int n = 0; n < s.n; ++n) {
    auto om = image_matrix(out, n);
    om.noalias() = wm * im2col(x, n, ws.h, ws.w, opt, ho, wo);
    om.colwise() += bv;
  }

  const Var out_var = next_var(g);
  return g.record(
      "conv2d", std::move(out), {input, weights, bias}, [=](Graph& gr) {
        const Tensor& go = gr.grad(out_var);
        const Tensor& xv = gr.value(input);
        const Tensor& wv = gr.value(weights);
        const Shape wsh = wv.shape();
        const Eigen::Index kdim = static_cast<Eigen::Index>(wsh.c) * wsh.h * wsh.w;
        const ConstMatrixMap wmat(wv.data(), wsh.n, kdim);
        for (int n = 0; n < xv.shape().n; ++n) {
          const auto gom = image_matrix(go, n);
          if (gr.needs_grad(weights)) {
            MatrixMap gw(gr.grad(weights).data(), wsh.n, kdim);
            gw.noalias() +=
                gom * im2col(xv, n, wsh.h, wsh.w, opt, ho, wo).transpose();
          }
          if (gr.needs_grad(input)) {
            RowMatrix gcol = wmat.transpose() * gom;
            col2im(gcol, gr.grad(input), n, wsh.h, wsh.w, opt, ho, wo);
          }
          if (gr.needs_grad(bias)) {
            Eigen::Map<Eigen::VectorXd> gb(gr.grad(bias).data(), wsh.n);
            gb += gom.rowwise().sum();
          }
        }
      });
}

Var conv_transpose2d(Graph& g, Var input, Var weights, Var bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weights);
  const Tensor& b = g.value(bias);
  const Shape s = x.shape();
  const Shape ws = w.shape();
  require(ws.n == s.c, "conv_transpose2d: weights " + ws.str() +
                           " do not match input channels " + std::to_string(s.c));
  require(b.size() == static_cast<std::size_t>(ws.c),
          "conv_transpose2d: bias length mismatch");
  const int co = ws.c, kh = ws.h, kw = ws.w;
  const Eigen::Index kdim = static_cast<Eigen::Index>(co) * kh * kw;

  Tensor out(Shape{s.n, co, s.h * kh, s.w * kw});
  const ConstMatrixMap wm(w.data(), s.c, kdim);
  for (int n = 0; n < s.n; ++n) {
    const RowMatrix cols = wm.transpose() * image_matrix(x, n);
    for (int c = 0; c < co; ++c)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          const Eigen::Index r = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
          for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx)
              out.at(n, c, y * kh + i, xx * kw + j) =
                  cols(r, static_cast<Eigen::Index>(y) * s.w + xx) + b[c];
        }
  }

  const Var out_var = next_var(g);
  return g.record(
      "conv_transpose2d", std::move(out), {input, weights, bias},
      [=](Graph& gr) {
        const Tensor& go = gr.grad(out_var);
        const Tensor& xv = gr.value(input);
        const Tensor& wv = gr.value(weights);
        const Shape sh = xv.shape();
        const ConstMatrixMap wmat(wv.data(), sh.c, kdim);
        for (int n = 0; n < sh.n; ++n) {
          RowMatrix gcols(kdim, static_cast<Eigen::Index>(sh.h) * sh.w);
          for (int c = 0; c < co; ++c)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const Eigen::Index r =
                    (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
                for (int y = 0; y < sh.h; ++y)
                  for (int xx = 0; xx < sh.w; ++xx)
                    gcols(r, static_cast<Eigen::Index>(y) * sh.w + xx) =
                        go.at(n, c, y * kh + i, xx * kw + j);
              }
          if (gr.needs_grad(weights)) {
            MatrixMap gw(gr.grad(weights).data(), sh.c, kdim);
            gw.noalias() += image_matrix(xv, n) * gcols.transpose();
          }
          if (gr.needs_grad(input))
            image_matrix(gr.grad(input), n).noalias() += wmat * gcols;
          if (gr.needs_grad(bias)) {
            Tensor& gb = gr.grad(bias);
            for (int c = 0; c < co; ++c)
              gb[c] += gcols.middleRows(static_cast<Eigen::Index>(c) * kh * kw,
                                        static_cast<Eigen::Index>(kh) * kw)
                           .sum();
          }
        }
      });
}

Var fully_connected(Graph& g, Var input, Var weights, Var bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weights);
  const Tensor& b = g.value(bias);
  require(x.is_matrix() && w.is_matrix(), "fully_connected: expects matrices");
  require(x.cols() == w.rows(), "fully_connected: input width " +
                                    std::to_string(x.cols()) +
                                    " does not match weight rows " +
                                    std::to_string(w.rows()));
  require(b.size() == static_cast<std::size_t>(w.cols()),
          "fully_connected: bias length mismatch");

  Tensor out = Tensor::matrix(x.rows(), w.cols());
  auto om = out.as_matrix();
  om.noalias() = x.as_matrix() * w.as_matrix();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), w.cols());

  const Var out_var = next_var(g);
  return g.record("fully_connected", std::move(out), {input, weights, bias},
                  [=](Graph& gr) {
                    const auto go = gr.grad(out_var).as_matrix();
                    if (gr.needs_grad(input))
                      gr.grad(input).as_matrix().noalias() +=
                          go * gr.value(weights).as_matrix().transpose();
                    if (gr.needs_grad(weights))
                      gr.grad(weights).as_matrix().noalias() +=
                          gr.value(input).as_matrix().transpose() * go;
                    if (gr.needs_grad(bias)) {
                      Tensor& gb = gr.grad(bias);
                      Eigen::Map<Eigen::RowVectorXd>(gb.data(), go.cols()) +=
                          go.colwise().sum();
                    }
                  });
}

Var activation(Graph& g, Var input, Activation kind) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape());
  const char* name = "sigmoid";
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
      break;
    case Activation::gelu:
      name = "gelu";
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
      break;
    case Activation::relu:
      name = "relu";
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(0.0, x[i]);
      break;
  }
  const Var out_var = next_var(g);
  return g.record(name, std::move(out), {input}, [=](Graph& gr) {
    const Tensor& go = gr.grad(out_var);
    const Tensor& xv = gr.value(input);
    const Tensor& yv = gr.value(out_var);
    Tensor& gx = gr.grad(input);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::sigmoid: d = yv[i] * (1.0 - yv[i]); break;
        case Activation::gelu: d = gelu_grad(xv[i]); break;
        case Activation::relu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
      }
      gx[i] += go[i] * d;
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "add");
  Tensor out = g.value(a) + g.value(b);
  const Var out_var = next_var(g);
  return g.record("add", std::move(out), {a, b}, [=](Graph& gr) {
    const Tensor& go = gr.grad(out_var);
    if (gr.needs_grad(a)) accumulate(gr.grad(a), go);
    if (gr.needs_grad(b)) accumulate(gr.grad(b), go);
  });
}

Var mul(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "mul");
  Tensor out = g.value(a) * g.value(b);
  const Var out_var = next_var(g);
  return g.record("mul", std::move(out), {a, b}, [=](Graph& gr) {
    const Tensor& go = gr.grad(out_var);
    if (gr.needs_grad(a)) {
      Tensor& ga = gr.grad(a);
      const Tensor& bv = gr.value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.needs_grad(b)) {
      Tensor& gb = gr.grad(b);
      const Tensor& av = gr.value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var layer_norm(Graph& g, Var input, Var gamma, Var beta, double eps) {
  const Tensor& x = g.value(input);
  require(x.is_matrix(), "layer_norm: expects a matrix");
  const int rows = x.rows(), d = x.cols();
  require(g.value(gamma).size() == static_cast<std::size_t>(d) &&
              g.value(beta).size() == static_cast<std::size_t>(d),
          "layer_norm: gain/shift length mismatch");
  const Tensor& ga = g.value(gamma);
  const Tensor& be = g.value(beta);

  auto xhat = std::make_shared<RowMatrix>(rows, d);
  auto inv = std::make_shared<Eigen::VectorXd>(rows);
  const auto xm = x.as_matrix();
  Tensor out = Tensor::matrix(rows, d);
  auto om = out.as_matrix();
  for (int r = 0; r < rows; ++r) {
    const double mean = xm.row(r).mean();
    const double var = (xm.row(r).array() - mean).square().mean();
    (*inv)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xm.row(r).array() - mean) * (*inv)(r);
    for (int c = 0; c < d; ++c) om(r, c) = (*xhat)(r, c) * ga[c] + be[c];
  }

  const Var out_var = next_var(g);
  return g.record("layer_norm", std::move(out), {input, gamma, beta},
                  [=](Graph& gr) {
                    const auto go = gr.grad(out_var).as_matrix();
                    const Tensor& gv = gr.value(gamma);
                    if (gr.needs_grad(gamma)) {
                      Tensor& gg = gr.grad(gamma);
                      for (int c = 0; c < d; ++c)
                        gg[c] += (go.col(c).array() * xhat->col(c).array()).sum();
                    }
                    if (gr.needs_grad(beta)) {
                      Tensor& gb = gr.grad(beta);
                      for (int c = 0; c < d; ++c) gb[c] += go.col(c).sum();
                    }
                    if (gr.needs_grad(input)) {
                      auto gx = gr.grad(input).as_matrix();
                      Eigen::RowVectorXd dxhat(d);
                      for (int r = 0; r < rows; ++r) {
                        for (int c = 0; c < d; ++c) dxhat(c) = go(r, c) * gv[c];
                        const double m1 = dxhat.mean();
                        const double m2 =
                            (dxhat.array() * xhat->row(r).array()).mean();
                        gx.row(r).array() +=
                            (*inv)(r) *
                            (dxhat.array() - m1 - xhat->row(r).array() * m2);
                      }
                    }
                  });
}

RowMatrix softmax_rows(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var multihead_attention(Graph& g, Var q, Var k, Var v, int heads) {
  const Tensor& qt = g.value(q);
  const Tensor& kt = g.value(k);
  const Tensor& vt = g.value(v);
  require(qt.is_matrix() && qt.shape() == kt.shape() && qt.shape() == vt.shape(),
          "multihead_attention: q, k, v must be equal-shaped matrices");
  const int t = qt.rows(), d = qt.cols();
  require(heads >= 1 && d % heads == 0,
          "multihead_attention: width " + std::to_string(d) +
              " not divisible by " + std::to_string(heads) + " heads");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<RowMatrix>>();
  Tensor out = Tensor::matrix(t, d);
  auto om = out.as_matrix();
  const auto qm = qt.as_matrix(), km = kt.as_matrix(), vm = vt.as_matrix();
  for (int h = 0; h < heads; ++h) {
    const auto qh = qm.middleCols(h * dh, dh);
    const auto kh = km.middleCols(h * dh, dh);
    RowMatrix scores = (qh * kh.transpose()) * scale;
    probs->push_back(softmax_rows(scores));
    om.middleCols(h * dh, dh).noalias() = probs->back() * vm.middleCols(h * dh, dh);
  }

  const Var out_var = next_var(g);
  return g.record(
      "multihead_attention", std::move(out), {q, k, v}, [=](Graph& gr) {
        const auto go = gr.grad(out_var).as_matrix();
        const auto qv = gr.value(q).as_matrix();
        const auto kv = gr.value(k).as_matrix();
        const auto vv = gr.value(v).as_matrix();
        for (int h = 0; h < heads; ++h) {
          const RowMatrix& a = (*probs)[static_cast<std::size_t>(h)];
          const auto goh = go.middleCols(h * dh, dh);
          if (gr.needs_grad(v))
            gr.grad(v).as_matrix().middleCols(h * dh, dh).noalias() +=
                a.transpose() * goh;
          if (!gr.needs_grad(q) && !gr.needs_grad(k)) continue;
          const RowMatrix da = goh * vv.middleCols(h * dh, dh).transpose();
          const Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
          RowMatrix ds = a.array() * (da.colwise() - rowdot).array();
          ds *= scale;
          if (gr.needs_grad(q))
            gr.grad(q).as_matrix().middleCols(h * dh, dh).noalias() +=
                ds * kv.middleCols(h * dh, dh);
          if (gr.needs_grad(k))
            gr.grad(k).as_matrix().middleCols(h * dh, dh).noalias() +=
                ds.transpose() * qv.middleCols(h * dh, dh);
        }
      });
}

Var avg_pool(Graph& g, Var input, int fh, int fw) {
  const Tensor& x = g.value(input);
  const Shape s = x.shape();
  require(fh >= 1 && fw >= 1 && s.h % fh == 0 && s.w % fw == 0,
          "avg_pool: " + std::to_string(s.h) + "x" + std::to_string(s.w) +
              " not divisible by window " + std::to_string(fh) + "x" +
              std::to_string(fw));
  const Shape os{s.n, s.c, s.h / fh, s.w / fw};
  const double norm = 1.0 / (fh * fw);
  Tensor out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          out.at(n, c, y / fh, xx / fw) += x.at(n, c, y, xx) * norm;

  const Var out_var = next_var(g);
  return g.record("avg_pool", std::move(out), {input}, [=](Graph& gr) {
    const Tensor& go = gr.grad(out_var);
    Tensor& gx = gr.grad(input);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx)
            gx.at(n, c, y, xx) += go.at(n, c, y / fh, xx / fw) * norm;
  });
}

Var grid_to_tokens(Graph& g, Var grid) {
  const Tensor& x = g.value(grid);
  const Shape s = x.shape();
  require(s.n == 1, "grid_to_tokens: batch size must be 1, got " + std::to_string(s.n));
  Tensor out = Tensor::matrix(s.h * s.w, s.c);
  out.as_matrix() = image_matrix(x, 0).transpose();
  const Var out_var = next_var(g);
  return g.record("grid_to_tokens", std::move(out), {grid}, [=](Graph& gr) {
    image_matrix(gr.grad(grid), 0) += gr.grad(out_var).as_matrix().transpose();
  });
}

Var tokens_to_grid(Graph& g, Var tokens, int h, int w) {
  const Tensor& x = g.value(tokens);
  require(x.is_matrix() && x.rows() == h * w,
          "tokens_to_grid: " + std::to_string(x.rows()) +
              " tokens cannot form a " + std::to_string(h) + "x" +
              std::to_string(w) + " grid");
  Tensor out(Shape{1, x.cols(), h, w});
  image_matrix(out, 0) = x.as_matrix().transpose();
  const Var out_var = next_var(g);
  return g.record("tokens_to_grid", std::move(out), {tokens}, [=](Graph& gr) {
    gr.grad(tokens).as_matrix() += image_matrix(gr.grad(out_var), 0).transpose();
  });
}

Var attention_block(Graph& g, Var tokens, const AttentionParams& p, int heads,
                    bool attention) {
  Var x = tokens;
  if (attention) {
    const Var h = layer_norm(g, x, p.ln1_gamma, p.ln1_beta);
    const Var q = fully_connected(g, h, p.wq, p.bq);
    const Var k = fully_connected(g, h, p.wk, p.bk);
    const Var v = fully_connected(g, h, p.wv, p.bv);
    const Var a = multihead_attention(g, q, k, v, heads);
    x = add(g, x, fully_connected(g, a, p.wo, p.bo));
  }
  const Var h2 = layer_norm(g, x, p.ln2_gamma, p.ln2_beta);
  const Var m = activation(g, fully_connected(g, h2, p.w1, p.b1), Activation::gelu);
  return add(g, x, fully_connected(g, m, p.w2, p.b2));
}

}  // namespace wrtsam::ops
