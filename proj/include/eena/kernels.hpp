#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "eena/tensor.hpp"

namespace eena {

// Convolution weights shaped (kernel_h, kernel_w, in_channels, filters).
// Convolutions carry no bias; the following BatchNorm supplies the affine.
template <class Real>
struct ConvParams {
  int kh = 0, kw = 0, cin = 0, cout = 0;
  std::vector<Real> w;  // row-major (kh, kw, cin, cout)

  ConvParams() = default;
  ConvParams(int kh_, int kw_, int cin_, int cout_)
      : kh(kh_), kw(kw_), cin(cin_), cout(cout_) {
    if (kh <= 0 || kw <= 0 || cin <= 0 || cout <= 0)
      throw shape_error("conv extents must be positive");
    if (kh % 2 == 0 || kw % 2 == 0)
      throw shape_error("conv kernel extents must be odd");
    w.assign(static_cast<std::size_t>(kh) * kw * cin * cout, Real(0));
  }

  std::size_t index(int i, int j, int a, int b) const {
    return ((static_cast<std::size_t>(i) * kw + j) * cin + a) * cout + b;
  }
  Real& at(int i, int j, int a, int b) { return w[index(i, j, a, b)]; }
  const Real& at(int i, int j, int a, int b) const {
    return w[index(i, j, a, b)];
  }

  void he_normal_init(Rng& rng) {
    const double fan_in = static_cast<double>(kh) * kw * cin;
    fill_normal(w, rng, 0.0, std::sqrt(2.0 / fan_in));
  }
};

template <class Real>
struct BnParams {
  std::vector<Real> gamma, beta, running_mean, running_var;
  Real eps = Real(1e-5);

  BnParams() = default;
  explicit BnParams(int channels, Real eps_ = Real(1e-5)) : eps(eps_) {
    gamma.assign(channels, Real(1));
    beta.assign(channels, Real(0));
    running_mean.assign(channels, Real(0));
    running_var.assign(channels, Real(1));
  }

  int channels() const { return static_cast<int>(gamma.size()); }

  // Calibrate running stats so inference normalization is an exact identity:
  // (x - 0) / sqrt((1 - eps) + eps) * 1 + 0 == x.
  void calibrate_identity() {
    std::fill(running_mean.begin(), running_mean.end(), Real(0));
    std::fill(running_var.begin(), running_var.end(), Real(1) - eps);
    std::fill(gamma.begin(), gamma.end(), Real(1));
    std::fill(beta.begin(), beta.end(), Real(0));
  }
};

template <class Real>
struct BnStats {
  std::vector<Real> mean, var;  // biased batch statistics, per channel
};

enum class RunMode { Train, Infer };

// ---------------------------------------------------------------------------
// Convolution, same padding, stride 1. The per-output reduction order is
// fixed at (ki, kj, a) ascending so results are bit-reproducible.
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& x, const ConvParams<Real>& p) {
  if (x.c() != p.cin)
    throw shape_error("conv2d: input " + x.shape_str() + " does not match kernel (" +
                      std::to_string(p.kh) + "," + std::to_string(p.kw) + "," +
                      std::to_string(p.cin) + "," + std::to_string(p.cout) + ")");
  const int n = x.n(), h = x.h(), w = x.w();
  const int ph = p.kh / 2, pw = p.kw / 2;
  Tensor<Real> y(n, h, w, p.cout);
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        Real* out = &y.at(in, oy, ox, 0);
        for (int ki = 0; ki < p.kh; ++ki) {
          const int sy = oy + ki - ph;
          if (sy < 0 || sy >= h) continue;
          for (int kj = 0; kj < p.kw; ++kj) {
            const int sx = ox + kj - pw;
            if (sx < 0 || sx >= w) continue;
            const Real* xin = &x.at(in, sy, sx, 0);
            const Real* wrow = &p.w[(static_cast<std::size_t>(ki) * p.kw + kj) *
                                    p.cin * p.cout];
            for (int a = 0; a < p.cin; ++a) {
              const Real xv = xin[a];
              const Real* wr = wrow + static_cast<std::size_t>(a) * p.cout;
              for (int f = 0; f < p.cout; ++f) out[f] += xv * wr[f];
            }
          }
        }
      }
    }
  }
  return y;
}

template <class Real>
struct ConvGrads {
  Tensor<Real> grad_x;
  std::vector<Real> grad_w;
};

template <class Real>
ConvGrads<Real> conv2d_backward(const Tensor<Real>& x, const ConvParams<Real>& p,
                                const Tensor<Real>& grad_out) {
  if (x.c() != p.cin) throw shape_error("conv2d_backward: input channel mismatch");
  if (grad_out.n() != x.n() || grad_out.h() != x.h() || grad_out.w() != x.w() ||
      grad_out.c() != p.cout)
    throw shape_error("conv2d_backward: grad_out " + grad_out.shape_str() +
                      " inconsistent with input " + x.shape_str());
  const int n = x.n(), h = x.h(), w = x.w();
  const int ph = p.kh / 2, pw = p.kw / 2;
  ConvGrads<Real> g;
  g.grad_x = Tensor<Real>::zeros(n, h, w, p.cin);
  g.grad_w.assign(p.w.size(), Real(0));
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        const Real* go = &grad_out.at(in, oy, ox, 0);
        for (int ki = 0; ki < p.kh; ++ki) {
          const int sy = oy + ki - ph;
          if (sy < 0 || sy >= h) continue;
          for (int kj = 0; kj < p.kw; ++kj) {
            const int sx = ox + kj - pw;
            if (sx < 0 || sx >= w) continue;
            const Real* xin = &x.at(in, sy, sx, 0);
            Real* gx = &g.grad_x.at(in, sy, sx, 0);
            const std::size_t wbase =
                (static_cast<std::size_t>(ki) * p.kw + kj) * p.cin * p.cout;
            for (int a = 0; a < p.cin; ++a) {
              const Real xv = xin[a];
              const Real* wr = &p.w[wbase + static_cast<std::size_t>(a) * p.cout];
              Real* gw = &g.grad_w[wbase + static_cast<std::size_t>(a) * p.cout];
              Real acc = Real(0);
              for (int f = 0; f < p.cout; ++f) {
                acc += wr[f] * go[f];
                gw[f] += xv * go[f];
              }
              gx[a] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

template <class Real>
std::pair<Tensor<Real>, BnStats<Real>> batchnorm_forward(
    const Tensor<Real>& x, BnParams<Real>& p, RunMode mode,
    Real momentum = Real(0.9)) {
  const int c = x.c();
  if (c != p.channels())
    throw shape_error("batchnorm: input " + x.shape_str() + " vs " +
                      std::to_string(p.channels()) + " channels");
  const std::size_t m = x.size() / c;  // samples per channel
  BnStats<Real> stats;
  stats.mean.assign(c, Real(0));
  stats.var.assign(c, Real(0));
  if (mode == RunMode::Train) {
    for (std::size_t i = 0; i < x.size(); i += c)
      for (int ch = 0; ch < c; ++ch) stats.mean[ch] += x.data[i + ch];
    for (int ch = 0; ch < c; ++ch) stats.mean[ch] /= static_cast<Real>(m);
    for (std::size_t i = 0; i < x.size(); i += c)
      for (int ch = 0; ch < c; ++ch) {
        const Real d = x.data[i + ch] - stats.mean[ch];
        stats.var[ch] += d * d;
      }
    for (int ch = 0; ch < c; ++ch) stats.var[ch] /= static_cast<Real>(m);
    for (int ch = 0; ch < c; ++ch) {
      p.running_mean[ch] =
          momentum * p.running_mean[ch] + (Real(1) - momentum) * stats.mean[ch];
      p.running_var[ch] =
          momentum * p.running_var[ch] + (Real(1) - momentum) * stats.var[ch];
    }
  } else {
    stats.mean = p.running_mean;
    stats.var = p.running_var;
  }
  Tensor<Real> y(x.n(), x.h(), x.w(), c);
  std::vector<Real> scale(c), shift(c);
  for (int ch = 0; ch < c; ++ch) {
    const Real inv = Real(1) / std::sqrt(stats.var[ch] + p.eps);
    scale[ch] = p.gamma[ch] * inv;
    shift[ch] = p.beta[ch] - stats.mean[ch] * scale[ch];
  }
  for (std::size_t i = 0; i < x.size(); i += c)
    for (int ch = 0; ch < c; ++ch)
      y.data[i + ch] = x.data[i + ch] * scale[ch] + shift[ch];
  return {std::move(y), std::move(stats)};
}

template <class Real>
struct BnGrads {
  Tensor<Real> grad_x;
  std::vector<Real> grad_gamma, grad_beta;
};

// Backward through train-mode normalization (batch statistics).
template <class Real>
BnGrads<Real> batchnorm_backward(const Tensor<Real>& x, const BnParams<Real>& p,
                                 const BnStats<Real>& stats,
                                 const Tensor<Real>& grad_out) {
  if (!x.same_shape(grad_out))
    throw shape_error("batchnorm_backward: shape mismatch");
  const int c = x.c();
  const std::size_t m = x.size() / c;
  BnGrads<Real> g;
  g.grad_x = Tensor<Real>::zeros(x.n(), x.h(), x.w(), c);
  g.grad_gamma.assign(c, Real(0));
  g.grad_beta.assign(c, Real(0));
  std::vector<Real> inv_std(c), sum_dy(c, Real(0)), sum_dy_xhat(c, Real(0));
  for (int ch = 0; ch < c; ++ch)
    inv_std[ch] = Real(1) / std::sqrt(stats.var[ch] + p.eps);
  for (std::size_t i = 0; i < x.size(); i += c)
    for (int ch = 0; ch < c; ++ch) {
      const Real xhat = (x.data[i + ch] - stats.mean[ch]) * inv_std[ch];
      const Real dy = grad_out.data[i + ch];
      sum_dy[ch] += dy;
      sum_dy_xhat[ch] += dy * xhat;
    }
  for (int ch = 0; ch < c; ++ch) {
    g.grad_gamma[ch] = sum_dy_xhat[ch];
    g.grad_beta[ch] = sum_dy[ch];
  }
  const Real inv_m = Real(1) / static_cast<Real>(m);
  for (std::size_t i = 0; i < x.size(); i += c)
    for (int ch = 0; ch < c; ++ch) {
      const Real xhat = (x.data[i + ch] - stats.mean[ch]) * inv_std[ch];
      const Real dy = grad_out.data[i + ch];
      g.grad_x.data[i + ch] =
          p.gamma[ch] * inv_std[ch] *
          (dy - inv_m * sum_dy[ch] - xhat * inv_m * sum_dy_xhat[ch]);
    }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  Tensor<Real> y = x;
  for (Real& v : y.data) v = std::max(v, Real(0));
  return y;
}

// Ties at exactly 0 pass zero gradient.
template <class Real>
Tensor<Real> relu_backward(const Tensor<Real>& x, const Tensor<Real>& grad_out) {
  if (!x.same_shape(grad_out)) throw shape_error("relu_backward: shape mismatch");
  Tensor<Real> g = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data[i] <= Real(0)) g.data[i] = Real(0);
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Odd extents are padded with -inf on the high
// edge. The forward pass records flat argmax indices for the backward pass;
// ties go to the first element in window scan order.
// ---------------------------------------------------------------------------

template <class Real>
struct PoolResult {
  Tensor<Real> y;
  std::vector<std::int64_t> argmax;  // flat index into x per output element
};

template <class Real>
PoolResult<Real> maxpool2_forward(const Tensor<Real>& x) {
  const int n = x.n(), h = x.h(), w = x.w(), c = x.c();
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  PoolResult<Real> r;
  r.y = Tensor<Real>(n, oh, ow, c);
  r.argmax.assign(r.y.size(), -1);
  for (int in = 0; in < n; ++in)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::int64_t best_idx = -1;
          for (int dy = 0; dy < 2; ++dy) {
            const int sy = 2 * oy + dy;
            if (sy >= h) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int sx = 2 * ox + dx;
              if (sx >= w) continue;
              const Real v = x.at(in, sy, sx, ch);
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int64_t>(x.index(in, sy, sx, ch));
              }
            }
          }
          const std::size_t oi = r.y.index(in, oy, ox, ch);
          r.y.data[oi] = best;
          r.argmax[oi] = best_idx;
        }
  return r;
}

template <class Real>
Tensor<Real> maxpool2_backward(const std::array<int, 4>& x_shape,
                               const std::vector<std::int64_t>& argmax,
                               const Tensor<Real>& grad_out) {
  Tensor<Real> gx(x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
  if (argmax.size() != grad_out.size())
    throw shape_error("maxpool2_backward: argmax/grad size mismatch");
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    if (argmax[i] >= 0) gx.data[argmax[i]] += grad_out.data[i];
  return gx;
}

// ---------------------------------------------------------------------------
// Global average pooling to 1x1 spatial.
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
  const int n = x.n(), h = x.h(), w = x.w(), c = x.c();
  Tensor<Real> y(n, 1, 1, c);
  const Real inv = Real(1) / static_cast<Real>(h * w);
  for (int in = 0; in < n; ++in) {
    Real* out = &y.at(in, 0, 0, 0);
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const Real* row = &x.at(in, iy, ix, 0);
        for (int ch = 0; ch < c; ++ch) out[ch] += row[ch];
      }
    for (int ch = 0; ch < c; ++ch) out[ch] *= inv;
  }
  return y;
}

template <class Real>
Tensor<Real> global_avg_pool_backward(const std::array<int, 4>& x_shape,
                                      const Tensor<Real>& grad_out) {
  Tensor<Real> gx(x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
  const Real inv = Real(1) / static_cast<Real>(x_shape[1] * x_shape[2]);
  for (int in = 0; in < x_shape[0]; ++in) {
    const Real* go = &grad_out.at(in, 0, 0, 0);
    for (int iy = 0; iy < x_shape[1]; ++iy)
      for (int ix = 0; ix < x_shape[2]; ++ix) {
        Real* row = &gx.at(in, iy, ix, 0);
        for (int ch = 0; ch < x_shape[3]; ++ch) row[ch] = go[ch] * inv;
      }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Dense classifier head: (n,1,1,c) -> (n,1,1,classes), weights (c, classes).
// ---------------------------------------------------------------------------

template <class Real>
struct DenseParams {
  int cin = 0, cout = 0;
  std::vector<Real> w;  // row-major (cin, cout)
  std::vector<Real> b;

  DenseParams() = default;
  DenseParams(int cin_, int cout_) : cin(cin_), cout(cout_) {
    if (cin <= 0 || cout <= 0) throw shape_error("dense extents must be positive");
    w.assign(static_cast<std::size_t>(cin) * cout, Real(0));
    b.assign(cout, Real(0));
  }

  void he_normal_init(Rng& rng) {
    fill_normal(w, rng, 0.0, std::sqrt(2.0 / cin));
    std::fill(b.begin(), b.end(), Real(0));
  }
};

template <class Real>
Tensor<Real> dense_forward(const Tensor<Real>& x, const DenseParams<Real>& p) {
  if (x.h() != 1 || x.w() != 1 || x.c() != p.cin)
    throw shape_error("dense: input " + x.shape_str() + " vs (" +
                      std::to_string(p.cin) + "," + std::to_string(p.cout) + ")");
  Tensor<Real> y(x.n(), 1, 1, p.cout);
  for (int in = 0; in < x.n(); ++in) {
    const Real* xv = &x.at(in, 0, 0, 0);
    Real* out = &y.at(in, 0, 0, 0);
    for (int k = 0; k < p.cout; ++k) out[k] = p.b[k];
    for (int a = 0; a < p.cin; ++a) {
      const Real* wr = &p.w[static_cast<std::size_t>(a) * p.cout];
      for (int k = 0; k < p.cout; ++k) out[k] += xv[a] * wr[k];
    }
  }
  return y;
}

template <class Real>
struct DenseGrads {
  Tensor<Real> grad_x;
  std::vector<Real> grad_w, grad_b;
};

template <class Real>
DenseGrads<Real> dense_backward(const Tensor<Real>& x, const DenseParams<Real>& p,
                                const Tensor<Real>& grad_out) {
  DenseGrads<Real> g;
  g.grad_x = Tensor<Real>::zeros(x.n(), 1, 1, p.cin);
  g.grad_w.assign(p.w.size(), Real(0));
  g.grad_b.assign(p.b.size(), Real(0));
  for (int in = 0; in < x.n(); ++in) {
    const Real* xv = &x.at(in, 0, 0, 0);
    const Real* go = &grad_out.at(in, 0, 0, 0);
    Real* gx = &g.grad_x.at(in, 0, 0, 0);
    for (int k = 0; k < p.cout; ++k) g.grad_b[k] += go[k];
    for (int a = 0; a < p.cin; ++a) {
      const Real* wr = &p.w[static_cast<std::size_t>(a) * p.cout];
      Real* gw = &g.grad_w[static_cast<std::size_t>(a) * p.cout];
      Real acc = Real(0);
      for (int k = 0; k < p.cout; ++k) {
        acc += wr[k] * go[k];
        gw[k] += xv[a] * go[k];
      }
      gx[a] = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over (n,1,1,classes) logits, mean over the batch.
// ---------------------------------------------------------------------------

template <class Real>
struct LossResult {
  double loss = 0.0;
  Tensor<Real> grad_logits;
};

template <class Real>
LossResult<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                       const std::vector<int>& labels) {
  const int n = logits.n(), k = logits.c();
  if (logits.h() != 1 || logits.w() != 1)
    throw shape_error("softmax_cross_entropy: logits must be (n,1,1,classes)");
  if (static_cast<int>(labels.size()) != n)
    throw shape_error("softmax_cross_entropy: batch/label count mismatch");
  LossResult<Real> r;
  r.grad_logits = Tensor<Real>::zeros(n, 1, 1, k);
  double total = 0.0;
  for (int in = 0; in < n; ++in) {
    if (labels[in] < 0 || labels[in] >= k)
      throw data_error("label index " + std::to_string(labels[in]) +
                       " out of range for " + std::to_string(k) + " classes");
    const Real* z = &logits.at(in, 0, 0, 0);
    Real zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    const double log_denom = std::log(denom);
    total += log_denom - static_cast<double>(z[labels[in]] - zmax);
    Real* g = &r.grad_logits.at(in, 0, 0, 0);
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(z[j] - zmax)) / denom;
      g[j] = static_cast<Real>((p - (j == labels[in] ? 1.0 : 0.0)) / n);
    }
  }
  r.loss = total / n;
  return r;
}

// Row-wise softmax probabilities (for diagnostics and tests).
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& logits) {
  Tensor<Real> p = logits;
  const int n = logits.n(), k = logits.c();
  for (int in = 0; in < n; ++in) {
    Real* z = &p.at(in, 0, 0, 0);
    Real zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    for (int j = 0; j < k; ++j)
      z[j] = static_cast<Real>(std::exp(static_cast<double>(z[j] - zmax)) / denom);
  }
  return p;
}

// ---------------------------------------------------------------------------
// SGD with decoupled-from-schedule L2: p <- p - lr * (g + wd * p).
// ---------------------------------------------------------------------------

template <class Real>
void sgd_step(std::vector<Real>& params, const std::vector<Real>& grads,
              double lr, double weight_decay) {
  if (params.size() != grads.size())
    throw shape_error("sgd_step: param/grad size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i] = static_cast<Real>(params[i] -
                                  lr * (static_cast<double>(grads[i]) +
                                        weight_decay * params[i]));
}

// ---------------------------------------------------------------------------
// SGDR cosine schedule with warm restarts; cycle lengths t0 * t_mult^i.
// ---------------------------------------------------------------------------

struct SgdrSchedule {
  double l_max = 0.05;
  int t0 = 1;
  int t_mult = 2;

  void validate() const {
    if (l_max <= 0) throw data_error("sgdr: l_max must be positive");
    if (t0 <= 0) throw data_error("sgdr: t0 must be positive");
    if (t_mult < 1) throw data_error("sgdr: t_mult must be >= 1");
  }
};

inline double sgdr_lr(const SgdrSchedule& s, double epoch) {
  s.validate();
  if (epoch < 0) throw data_error("sgdr: epoch must be non-negative");
  double start = 0.0;
  double len = s.t0;
  while (epoch >= start + len) {
    start += len;
    len *= s.t_mult;
  }
  const double t_cur = epoch - start;
  return s.l_max * 0.5 * (1.0 + std::cos(M_PI * t_cur / len));
}

}  // namespace eena
