#include "vipnas/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vipnas::ag {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

// Window geometry shared by conv (small = output) and deconv (small = input):
// big_y = small_y * stride - pad + ky.
struct Window {
  int n, k, stride, pad;
  int small_h, small_w, big_h, big_w;
  std::size_t ncols() const {
    return static_cast<std::size_t>(n) * small_h * small_w;
  }
};

// cols[(c*K + ky)*K + kx][n*Hs*Ws + sy*Ws + sx] = big[n][c0 + c][by][bx]
void gather_cols(const Tensor& big, int c0, int channels, const Window& g,
                 std::vector<float>& cols) {
  const std::size_t ncols = g.ncols();
  cols.assign(static_cast<std::size_t>(channels) * g.k * g.k * ncols, 0.0f);
  const int hw = g.small_h * g.small_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = cols.data() + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ncols;
        for (int n = 0; n < g.n; ++n) {
          const float* src = big.plane(n, c0 + c);
          float* dst = row + static_cast<std::size_t>(n) * hw;
          for (int sy = 0; sy < g.small_h; ++sy) {
            const int by = sy * g.stride - g.pad + ky;
            if (by < 0 || by >= g.big_h) continue;
            const float* srow = src + static_cast<std::size_t>(by) * g.big_w;
            float* drow = dst + sy * g.small_w;
            for (int sx = 0; sx < g.small_w; ++sx) {
              const int bx = sx * g.stride - g.pad + kx;
              if (bx >= 0 && bx < g.big_w) drow[sx] = srow[bx];
            }
          }
        }
      }
    }
  }
}

// Adjoint of gather_cols: big[n][c0 + c][by][bx] += cols[...]; out-of-range
// positions are dropped.
void scatter_cols(const float* cols, int c0, int channels, const Window& g,
                  Tensor& big) {
  const std::size_t ncols = g.ncols();
  const int hw = g.small_h * g.small_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ncols;
        for (int n = 0; n < g.n; ++n) {
          float* dst = big.plane(n, c0 + c);
          const float* src = row + static_cast<std::size_t>(n) * hw;
          for (int sy = 0; sy < g.small_h; ++sy) {
            const int by = sy * g.stride - g.pad + ky;
            if (by < 0 || by >= g.big_h) continue;
            float* drow = dst + static_cast<std::size_t>(by) * g.big_w;
            const float* srow = src + sy * g.small_w;
            for (int sx = 0; sx < g.small_w; ++sx) {
              const int bx = sx * g.stride - g.pad + kx;
              if (bx >= 0 && bx < g.big_w) drow[bx] += srow[sx];
            }
          }
        }
      }
    }
  }
}

// Packs channels [c0, c0 + channels) into a (channels x N*H*W) matrix.
void pack_channels(const Tensor& t, int c0, int channels, std::vector<float>& out) {
  const std::size_t hw = static_cast<std::size_t>(t.h()) * t.w();
  const std::size_t ncols = hw * t.n();
  out.resize(static_cast<std::size_t>(channels) * ncols);
  for (int c = 0; c < channels; ++c) {
    for (int n = 0; n < t.n(); ++n) {
      std::copy_n(t.plane(n, c0 + c), hw, out.data() + c * ncols + n * hw);
    }
  }
}

void unpack_channels_add(const float* m, int c0, int channels, Tensor& t) {
  const std::size_t hw = static_cast<std::size_t>(t.h()) * t.w();
  const std::size_t ncols = hw * t.n();
  for (int c = 0; c < channels; ++c) {
    for (int n = 0; n < t.n(); ++n) {
      float* dst = t.plane(n, c0 + c);
      const float* src = m + c * ncols + n * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  }
}

void check_slice(const Tensor& x, const Tensor& w, const ConvSlice& s,
                 const char* op) {
  const std::string tag = op;
  require(s.groups >= 1 && s.out % s.groups == 0,
          tag + ": groups must divide the output channel count");
  require(x.c() == s.in_per_group * s.groups,
          tag + ": input has " + std::to_string(x.c()) + " channels, slice expects " +
              std::to_string(s.in_per_group * s.groups));
  require(s.out <= w.n() && s.in_per_group <= w.c(),
          tag + ": slice exceeds the shared weight " + w.shape().str());
  require(s.kernel <= w.h() && (w.h() - s.kernel) % 2 == 0,
          tag + ": kernel " + std::to_string(s.kernel) +
              " is not centre-alignable in " + std::to_string(w.h()));
}

float& weight_at(Tensor& w, int o, int i, int off, int ky, int kx) {
  return w.at(o, i, off + ky, off + kx);
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var* bias, const ConvSlice& s) {
  const Tensor& X = x->value;
  const Tensor& Wt = weight->value;
  check_slice(X, Wt, s, "conv2d");
  const int G = s.groups, ipg = s.in_per_group, opg = s.out / G, K = s.kernel;
  const int off = (Wt.h() - K) / 2;
  const int ho = conv_out_size(X.h(), K, s.stride, s.pad);
  const int wo = conv_out_size(X.w(), K, s.stride, s.pad);
  require(ho > 0 && wo > 0, "conv2d: empty output");

  const Window win{X.n(), K, s.stride, s.pad, ho, wo, X.h(), X.w()};
  const std::size_t ncols = win.ncols();
  const int krows = ipg * K * K;
  const int hw = ho * wo;

  Tensor Y(X.n(), s.out, ho, wo);
  auto cols = std::make_shared<std::vector<std::vector<float>>>(G);
  auto packed = std::make_shared<std::vector<RowMat>>(G);
  for (int g = 0; g < G; ++g) {
    gather_cols(X, g * ipg, ipg, win, (*cols)[g]);
    RowMat& Wg = (*packed)[g];
    Wg.resize(opg, krows);
    for (int o = 0; o < opg; ++o)
      for (int i = 0; i < ipg; ++i)
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx)
            Wg(o, (i * K + ky) * K + kx) = Wt.at(g * opg + o, i, off + ky, off + kx);
    RowMat R = Wg * ConstMapMat((*cols)[g].data(), krows, ncols);
    for (int o = 0; o < opg; ++o) {
      const int oc = g * opg + o;
      const float b = bias ? (*bias)->value.data()[oc] : 0.0f;
      for (int n = 0; n < X.n(); ++n) {
        float* dst = Y.plane(n, oc);
        const float* src = R.data() + o * ncols + static_cast<std::size_t>(n) * hw;
        for (int p = 0; p < hw; ++p) dst[p] = src[p] + b;
      }
    }
  }

  std::vector<Var> parents{x, weight};
  Var bias_var = bias ? *bias : nullptr;
  if (bias_var) parents.push_back(bias_var);
  return make_result(
      std::move(Y), std::move(parents),
      [x, weight, bias_var, s, win, cols, packed, off, opg, krows, hw](Node& self) {
        const Tensor& dY = self.grad;
        const int G = s.groups, ipg = s.in_per_group, K = s.kernel;
        const std::size_t ncols = win.ncols();
        RowMat dR(opg, ncols);
        for (int g = 0; g < G; ++g) {
          for (int o = 0; o < opg; ++o)
            for (int n = 0; n < win.n; ++n)
              std::copy_n(dY.plane(n, g * opg + o), hw,
                          dR.data() + o * ncols + static_cast<std::size_t>(n) * hw);
          if (weight->requires_grad) {
            RowMat dW = dR * ConstMapMat((*cols)[g].data(), krows, ncols).transpose();
            Tensor& gw = weight->grad_buffer();
            for (int o = 0; o < opg; ++o)
              for (int i = 0; i < ipg; ++i)
                for (int ky = 0; ky < K; ++ky)
                  for (int kx = 0; kx < K; ++kx)
                    weight_at(gw, g * opg + o, i, off, ky, kx) +=
                        dW(o, (i * K + ky) * K + kx);
          }
          if (x->requires_grad) {
            RowMat dcols = (*packed)[g].transpose() * dR;
            scatter_cols(dcols.data(), g * ipg, ipg, win, x->grad_buffer());
          }
        }
        if (bias_var && bias_var->requires_grad) {
          float* gb = bias_var->grad_buffer().data();
          for (int oc = 0; oc < s.out; ++oc) {
            double acc = 0.0;
            for (int n = 0; n < win.n; ++n) {
              const float* p = dY.plane(n, oc);
              for (int i = 0; i < hw; ++i) acc += p[i];
            }
            gb[oc] += static_cast<float>(acc);
          }
        }
      });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var* bias,
                     const ConvSlice& s, int out_h, int out_w) {
  const Tensor& X = x->value;
  const Tensor& Wt = weight->value;
  check_slice(X, Wt, s, "conv_transpose2d");
  const int G = s.groups, ipg = s.in_per_group, opg = s.out / G, K = s.kernel;
  const int off = (Wt.h() - K) / 2;
  const int full_h = (X.h() - 1) * s.stride - 2 * s.pad + K;
  const int full_w = (X.w() - 1) * s.stride - 2 * s.pad + K;
  require(out_h > 0 && out_w > 0 && out_h <= full_h && out_w <= full_w,
          "conv_transpose2d: crop size exceeds the transposed output");

  const Window win{X.n(), K, s.stride, s.pad, X.h(), X.w(), out_h, out_w};
  const std::size_t ncols = win.ncols();
  const int arows = opg * K * K;

  Tensor Y(X.n(), s.out, out_h, out_w);
  auto xs = std::make_shared<std::vector<std::vector<float>>>(G);
  auto packed = std::make_shared<std::vector<RowMat>>(G);
  for (int g = 0; g < G; ++g) {
    pack_channels(X, g * ipg, ipg, (*xs)[g]);
    RowMat& A = (*packed)[g];
    A.resize(arows, ipg);
    for (int o = 0; o < opg; ++o)
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx)
          for (int i = 0; i < ipg; ++i)
            A((o * K + ky) * K + kx, i) = Wt.at(g * opg + o, i, off + ky, off + kx);
    RowMat cols = A * ConstMapMat((*xs)[g].data(), ipg, ncols);
    scatter_cols(cols.data(), g * opg, opg, win, Y);
  }
  if (bias) {
    const float* b = (*bias)->value.data();
    for (int n = 0; n < Y.n(); ++n)
      for (int oc = 0; oc < s.out; ++oc) {
        float* p = Y.plane(n, oc);
        for (int i = 0; i < out_h * out_w; ++i) p[i] += b[oc];
      }
  }

  std::vector<Var> parents{x, weight};
  Var bias_var = bias ? *bias : nullptr;
  if (bias_var) parents.push_back(bias_var);
  return make_result(
      std::move(Y), std::move(parents),
      [x, weight, bias_var, s, win, xs, packed, off, opg, arows](Node& self) {
        const Tensor& dY = self.grad;
        const int G = s.groups, ipg = s.in_per_group, K = s.kernel;
        const std::size_t ncols = win.ncols();
        std::vector<float> dcols;
        for (int g = 0; g < G; ++g) {
          gather_cols(dY, g * opg, opg, win, dcols);
          ConstMapMat dC(dcols.data(), arows, ncols);
          if (weight->requires_grad) {
            RowMat dA = dC * ConstMapMat((*xs)[g].data(), ipg, ncols).transpose();
            Tensor& gw = weight->grad_buffer();
            for (int o = 0; o < opg; ++o)
              for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx)
                  for (int i = 0; i < ipg; ++i)
                    weight_at(gw, g * opg + o, i, off, ky, kx) += dA((o * K + ky) * K + kx, i);
          }
          if (x->requires_grad) {
            RowMat dX = (*packed)[g].transpose() * dC;
            unpack_channels_add(dX.data(), g * ipg, ipg, x->grad_buffer());
          }
        }
        if (bias_var && bias_var->requires_grad) {
          float* gb = bias_var->grad_buffer().data();
          const int hw = dY.h() * dY.w();
          for (int oc = 0; oc < s.out; ++oc) {
            double acc = 0.0;
            for (int n = 0; n < dY.n(); ++n) {
              const float* p = dY.plane(n, oc);
              for (int i = 0; i < hw; ++i) acc += p[i];
            }
            gb[oc] += static_cast<float>(acc);
          }
        }
      });
}

void NormStats::begin_calibration() {
  std::fill(acc_mean.begin(), acc_mean.end(), 0.0);
  std::fill(acc_var.begin(), acc_var.end(), 0.0);
  std::fill(acc_count.begin(), acc_count.end(), 0);
}

void NormStats::finish_calibration() {
  // Channels beyond the calibrated width keep their previous statistics.
  for (std::size_t c = 0; c < mean.size(); ++c) {
    if (acc_count[c] == 0) continue;
    mean[c] = static_cast<float>(acc_mean[c] / acc_count[c]);
    var[c] = static_cast<float>(acc_var[c] / acc_count[c]);
  }
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormStats& stats,
               NormMode mode, float momentum, float eps) {
  const Tensor& X = x->value;
  const int C = X.c();
  require(C <= gamma->value.c() && C <= static_cast<int>(stats.mean.size()),
          "batch_norm: input wider than the layer");
  const int hw = X.h() * X.w();
  const double m = static_cast<double>(X.n()) * hw;
  const float* gm = gamma->value.data();
  const float* bt = beta->value.data();

  std::vector<float> mean(C), inv_std(C);
  const bool batch_stats = mode != NormMode::Eval;
  for (int c = 0; c < C; ++c) {
    if (batch_stats) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < X.n(); ++n) {
        const float* p = X.plane(n, c);
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / m;
      for (int n = 0; n < X.n(); ++n) {
        const float* p = X.plane(n, c);
        for (int i = 0; i < hw; ++i) s2 += (p[i] - mu) * (p[i] - mu);
      }
      const double var = s2 / m;
      const double unbiased = m > 1 ? s2 / (m - 1) : var;
      mean[c] = static_cast<float>(mu);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      if (mode == NormMode::Train) {
        stats.mean[c] = (1.0f - momentum) * stats.mean[c] + momentum * static_cast<float>(mu);
        stats.var[c] = (1.0f - momentum) * stats.var[c] + momentum * static_cast<float>(unbiased);
      } else {
        stats.acc_mean[c] += mu;
        stats.acc_var[c] += unbiased;
        ++stats.acc_count[c];
      }
    } else {
      mean[c] = stats.mean[c];
      inv_std[c] = 1.0f / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor Y(X.shape());
  auto xhat = std::make_shared<Tensor>(X.shape());
  for (int n = 0; n < X.n(); ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = X.plane(n, c);
      float* h = xhat->plane(n, c);
      float* y = Y.plane(n, c);
      for (int i = 0; i < hw; ++i) {
        h[i] = (p[i] - mean[c]) * inv_std[c];
        y[i] = gm[c] * h[i] + bt[c];
      }
    }

  return make_result(
      std::move(Y), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, batch_stats, C, hw, m](Node& self) {
        const Tensor& dY = self.grad;
        const int N = dY.n();
        const float* gm = gamma->value.data();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const float* d = dY.plane(n, c);
            const float* h = xhat->plane(n, c);
            for (int i = 0; i < hw; ++i) {
              sum_dy[c] += d[i];
              sum_dy_xhat[c] += d[i] * h[i];
            }
          }
        if (gamma->requires_grad) {
          float* g = gamma->grad_buffer().data();
          for (int c = 0; c < C; ++c) g[c] += static_cast<float>(sum_dy_xhat[c]);
        }
        if (beta->requires_grad) {
          float* g = beta->grad_buffer().data();
          for (int c = 0; c < C; ++c) g[c] += static_cast<float>(sum_dy[c]);
        }
        if (!x->requires_grad) return;
        Tensor& dX = x->grad_buffer();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const float* d = dY.plane(n, c);
            const float* h = xhat->plane(n, c);
            float* dx = dX.plane(n, c);
            const float k = gm[c] * inv_std[c];
            if (batch_stats) {
              const float mdy = static_cast<float>(sum_dy[c] / m);
              const float mdyh = static_cast<float>(sum_dy_xhat[c] / m);
              for (int i = 0; i < hw; ++i) dx[i] += k * (d[i] - mdy - h[i] * mdyh);
            } else {
              for (int i = 0; i < hw; ++i) dx[i] += k * d[i];
            }
          }
      });
}

Var relu(const Var& x) {
  Tensor Y(x->value.shape());
  const float* p = x->value.data();
  float* y = Y.data();
  for (std::size_t i = 0; i < Y.numel(); ++i) y[i] = p[i] > 0.0f ? p[i] : 0.0f;
  return make_result(std::move(Y), {x}, [x](Node& self) {
    float* dx = x->grad_buffer().data();
    const float* d = self.grad.data();
    const float* y = self.value.data();
    for (std::size_t i = 0; i < self.value.numel(); ++i)
      if (y[i] > 0.0f) dx[i] += d[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor Y(x->value.shape());
  const float* p = x->value.data();
  float* y = Y.data();
  for (std::size_t i = 0; i < Y.numel(); ++i) y[i] = 1.0f / (1.0f + std::exp(-p[i]));
  return make_result(std::move(Y), {x}, [x](Node& self) {
    float* dx = x->grad_buffer().data();
    const float* d = self.grad.data();
    const float* y = self.value.data();
    for (std::size_t i = 0; i < self.value.numel(); ++i) dx[i] += d[i] * y[i] * (1.0f - y[i]);
  });
}

Var add(const Var& a, const Var& b) {
  require(a->value.shape() == b->value.shape(), "add: shape mismatch");
  Tensor Y(a->value.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i)
    Y.data()[i] = a->value.data()[i] + b->value.data()[i];
  return make_result(std::move(Y), {a, b}, [a, b](Node& self) {
    const float* d = self.grad.data();
    for (const Var& v : {a, b}) {
      if (!v->requires_grad) continue;
      float* g = v->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += d[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require(a->value.shape() == b->value.shape(), "mul: shape mismatch");
  Tensor Y(a->value.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i)
    Y.data()[i] = a->value.data()[i] * b->value.data()[i];
  return make_result(std::move(Y), {a, b}, [a, b](Node& self) {
    const float* d = self.grad.data();
    if (a->requires_grad) {
      float* g = a->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += d[i] * b->value.data()[i];
    }
    if (b->requires_grad) {
      float* g = b->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += d[i] * a->value.data()[i];
    }
  });
}

Var scale(const Var& x, float k) {
  Tensor Y(x->value.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i) Y.data()[i] = k * x->value.data()[i];
  return make_result(std::move(Y), {x}, [x, k](Node& self) {
    float* g = x->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += k * self.grad.data()[i];
  });
}

Var max_pool3x3s2(const Var& x) {
  const Tensor& X = x->value;
  const int ho = conv_out_size(X.h(), 3, 2, 1), wo = conv_out_size(X.w(), 3, 2, 1);
  Tensor Y(X.n(), X.c(), ho, wo);
  auto arg = std::make_shared<std::vector<int>>(Y.numel());
  std::size_t k = 0;
  for (int n = 0; n < X.n(); ++n)
    for (int c = 0; c < X.c(); ++c) {
      const float* p = X.plane(n, c);
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox, ++k) {
          float best = -INFINITY;
          int bi = -1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= X.h()) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= X.w()) continue;
              if (p[iy * X.w() + ix] > best) {
                best = p[iy * X.w() + ix];
                bi = iy * X.w() + ix;
              }
            }
          }
          Y.data()[k] = best;
          (*arg)[k] = bi;
        }
    }
  return make_result(std::move(Y), {x}, [x, arg](Node& self) {
    Tensor& dX = x->grad_buffer();
    const int hw = self.value.h() * self.value.w();
    std::size_t k = 0;
    for (int n = 0; n < self.value.n(); ++n)
      for (int c = 0; c < self.value.c(); ++c) {
        float* dx = dX.plane(n, c);
        for (int i = 0; i < hw; ++i, ++k) dx[(*arg)[k]] += self.grad.data()[k];
      }
  });
}

namespace {

struct Lerp {
  int i0, i1;
  float l;
};

std::vector<Lerp> lerp_table(int in, int out) {
  std::vector<Lerp> t(out);
  const float sc = static_cast<float>(in) / static_cast<float>(out);
  for (int o = 0; o < out; ++o) {
    float src = (static_cast<float>(o) + 0.5f) * sc - 0.5f;
    if (src < 0.0f) src = 0.0f;
    const int i0 = std::min(static_cast<int>(src), in - 1);
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    t[o] = {i0, i1, src - static_cast<float>(i0)};
  }
  return t;
}

}  // namespace

Var bilinear_resize(const Var& x, int out_h, int out_w) {
  const Tensor& X = x->value;
  const auto ty = lerp_table(X.h(), out_h);
  const auto tx = lerp_table(X.w(), out_w);
  Tensor Y(X.n(), X.c(), out_h, out_w);
  for (int n = 0; n < X.n(); ++n)
    for (int c = 0; c < X.c(); ++c) {
      const float* p = X.plane(n, c);
      float* y = Y.plane(n, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const Lerp& a = ty[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const Lerp& b = tx[ox];
          // v0 + l*(v1 - v0) keeps constant maps exactly constant.
          const float top = p[a.i0 * X.w() + b.i0] + b.l * (p[a.i0 * X.w() + b.i1] - p[a.i0 * X.w() + b.i0]);
          const float bot = p[a.i1 * X.w() + b.i0] + b.l * (p[a.i1 * X.w() + b.i1] - p[a.i1 * X.w() + b.i0]);
          y[oy * out_w + ox] = top + a.l * (bot - top);
        }
      }
    }
  const int in_w = X.w();
  return make_result(std::move(Y), {x}, [x, ty, tx, in_w](Node& self) {
    Tensor& dX = x->grad_buffer();
    const int out_h = self.grad.h(), out_w = self.grad.w();
    for (int n = 0; n < self.grad.n(); ++n)
      for (int c = 0; c < self.grad.c(); ++c) {
        float* dx = dX.plane(n, c);
        const float* d = self.grad.plane(n, c);
        for (int oy = 0; oy < out_h; ++oy) {
          const Lerp& a = ty[oy];
          for (int ox = 0; ox < out_w; ++ox) {
            const Lerp& b = tx[ox];
            const float g = d[oy * out_w + ox];
            dx[a.i0 * in_w + b.i0] += g * (1 - a.l) * (1 - b.l);
            dx[a.i0 * in_w + b.i1] += g * (1 - a.l) * b.l;
            dx[a.i1 * in_w + b.i0] += g * a.l * (1 - b.l);
            dx[a.i1 * in_w + b.i1] += g * a.l * b.l;
          }
        }
      }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& X = x->value;
  const int hw = X.h() * X.w();
  Tensor Y(X.n(), X.c(), 1, 1);
  for (int n = 0; n < X.n(); ++n)
    for (int c = 0; c < X.c(); ++c) {
      double s = 0.0;
      const float* p = X.plane(n, c);
      for (int i = 0; i < hw; ++i) s += p[i];
      Y.at(n, c, 0, 0) = static_cast<float>(s / hw);
    }
  return make_result(std::move(Y), {x}, [x, hw](Node& self) {
    Tensor& dX = x->grad_buffer();
    for (int n = 0; n < dX.n(); ++n)
      for (int c = 0; c < dX.c(); ++c) {
        const float g = self.grad.at(n, c, 0, 0) / hw;
        float* dx = dX.plane(n, c);
        for (int i = 0; i < hw; ++i) dx[i] += g;
      }
  });
}

Var spatial_softmax(const Var& x) {
  const Tensor& X = x->value;
  require(X.c() == 1, "spatial_softmax: expects a single channel");
  const int hw = X.h() * X.w();
  Tensor Y(X.shape());
  for (int n = 0; n < X.n(); ++n) {
    const float* p = X.plane(n, 0);
    float* y = Y.plane(n, 0);
    const float mx = *std::max_element(p, p + hw);
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += (y[i] = std::exp(p[i] - mx));
    for (int i = 0; i < hw; ++i) y[i] = static_cast<float>(y[i] / s);
  }
  return make_result(std::move(Y), {x}, [x, hw](Node& self) {
    Tensor& dX = x->grad_buffer();
    for (int n = 0; n < dX.n(); ++n) {
      const float* y = self.value.plane(n, 0);
      const float* d = self.grad.plane(n, 0);
      double dot = 0.0;
      for (int i = 0; i < hw; ++i) dot += d[i] * y[i];
      float* dx = dX.plane(n, 0);
      for (int i = 0; i < hw; ++i) dx[i] += y[i] * (d[i] - static_cast<float>(dot));
    }
  });
}

Var attention_pool(const Var& x, const Var& weights) {
  const Tensor& X = x->value;
  const Tensor& A = weights->value;
  require(A.n() == X.n() && A.c() == 1 && A.h() == X.h() && A.w() == X.w(),
          "attention_pool: weight map shape mismatch");
  const int hw = X.h() * X.w();
  Tensor Y(X.n(), X.c(), 1, 1);
  for (int n = 0; n < X.n(); ++n) {
    const float* a = A.plane(n, 0);
    for (int c = 0; c < X.c(); ++c) {
      const float* p = X.plane(n, c);
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += p[i] * a[i];
      Y.at(n, c, 0, 0) = static_cast<float>(s);
    }
  }
  return make_result(std::move(Y), {x, weights}, [x, weights, hw](Node& self) {
    const Tensor& X = x->value;
    const Tensor& A = weights->value;
    for (int n = 0; n < X.n(); ++n) {
      const float* a = A.plane(n, 0);
      for (int c = 0; c < X.c(); ++c) {
        const float g = self.grad.at(n, c, 0, 0);
        if (x->requires_grad) {
          float* dx = x->grad_buffer().plane(n, c);
          for (int i = 0; i < hw; ++i) dx[i] += g * a[i];
        }
        if (weights->requires_grad) {
          float* da = weights->grad_buffer().plane(n, 0);
          const float* p = X.plane(n, c);
          for (int i = 0; i < hw; ++i) da[i] += g * p[i];
        }
      }
    }
  });
}

Var broadcast_add(const Var& x, const Var& v) {
  const Tensor& X = x->value;
  require(v->value.n() == X.n() && v->value.c() == X.c() && v->value.h() == 1 &&
              v->value.w() == 1,
          "broadcast_add: vector shape mismatch");
  const int hw = X.h() * X.w();
  Tensor Y(X.shape());
  for (int n = 0; n < X.n(); ++n)
    for (int c = 0; c < X.c(); ++c) {
      const float b = v->value.at(n, c, 0, 0);
      const float* p = X.plane(n, c);
      float* y = Y.plane(n, c);
      for (int i = 0; i < hw; ++i) y[i] = p[i] + b;
    }
  return make_result(std::move(Y), {x, v}, [x, v, hw](Node& self) {
    for (int n = 0; n < self.grad.n(); ++n)
      for (int c = 0; c < self.grad.c(); ++c) {
        const float* d = self.grad.plane(n, c);
        if (x->requires_grad) {
          float* dx = x->grad_buffer().plane(n, c);
          for (int i = 0; i < hw; ++i) dx[i] += d[i];
        }
        if (v->requires_grad) {
          double s = 0.0;
          for (int i = 0; i < hw; ++i) s += d[i];
          v->grad_buffer().at(n, c, 0, 0) += static_cast<float>(s);
        }
      }
  });
}

Var broadcast_mul(const Var& x, const Var& v) {
  const Tensor& X = x->value;
  require(v->value.n() == X.n() && v->value.c() == X.c() && v->value.h() == 1 &&
              v->value.w() == 1,
          "broadcast_mul: vector shape mismatch");
  const int hw = X.h() * X.w();
  Tensor Y(X.shape());
  for (int n = 0; n < X.n(); ++n)
    for (int c = 0; c < X.c(); ++c) {
      const float b = v->value.at(n, c, 0, 0);
      const float* p = X.plane(n, c);
      float* y = Y.plane(n, c);
      for (int i = 0; i < hw; ++i) y[i] = p[i] * b;
    }
  return make_result(std::move(Y), {x, v}, [x, v, hw](Node& self) {
    for (int n = 0; n < self.grad.n(); ++n)
      for (int c = 0; c < self.grad.c(); ++c) {
        const float* d = self.grad.plane(n, c);
        const float b = v->value.at(n, c, 0, 0);
        if (x->requires_grad) {
          float* dx = x->grad_buffer().plane(n, c);
          for (int i = 0; i < hw; ++i) dx[i] += d[i] * b;
        }
        if (v->requires_grad) {
          const float* p = x->value.plane(n, c);
          double s = 0.0;
          for (int i = 0; i < hw; ++i) s += d[i] * p[i];
          v->grad_buffer().at(n, c, 0, 0) += static_cast<float>(s);
        }
      }
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  require(pred->value.shape() == target->value.shape(),
          "mse_loss: shape mismatch " + pred->value.shape().str() + " vs " +
              target->value.shape().str());
  const std::size_t m = pred->value.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = pred->value.data()[i] - target->value.data()[i];
    s += d * d;
  }
  Tensor Y(1, 1, 1, 1, static_cast<float>(s / static_cast<double>(m)));
  return make_result(std::move(Y), {pred}, [pred, target, m](Node& self) {
    const float g = self.grad.data()[0] * 2.0f / static_cast<float>(m);
    float* dp = pred->grad_buffer().data();
    for (std::size_t i = 0; i < m; ++i)
      dp[i] += g * (pred->value.data()[i] - target->value.data()[i]);
  });
}

}  // namespace vipnas::ag
