#pragma once

#include "vipnas/autograd.hpp"

namespace vipnas::ag {

// Slice of a shared (O_max, I_max, K_max, K_max) weight used by one conv.
// Output channels [0, out), input slots [0, in_per_group), the centred
// kernel x kernel window. Each of the `groups` groups reads its own
// contiguous run of in_per_group input channels but the same weight slots.
struct ConvSlice {
  int out = 0;
  int in_per_group = 0;
  int kernel = 1;
  int groups = 1;
  int stride = 1;
  int pad = 0;
};

// Padding that keeps kernels centre-aligned for odd K (conv).
inline int conv_padding(int kernel) { return kernel / 2; }
// Padding for a transposed conv; stride 2 with K in {2,4} doubles the size.
inline int deconv_padding(int kernel, int stride) {
  return kernel > stride ? (kernel - stride) / 2 : 0;
}
inline int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Grouped, sliced convolution. `bias` may be null; it is sliced to `out`.
Var conv2d(const Var& x, const Var& weight, const Var* bias, const ConvSlice& s);

// Grouped, sliced transposed convolution. The full output of size
// (in-1)*stride - 2*pad + K is cropped to (out_h, out_w), keeping the top-left.
Var conv_transpose2d(const Var& x, const Var& weight, const Var* bias,
                     const ConvSlice& s, int out_h, int out_w);

enum class NormMode {
  Train,      // batch statistics, running statistics updated with momentum
  Eval,       // running statistics
  Calibrate,  // batch statistics, accumulated into the calibration buffers
};

// Running statistics for one normalisation layer, sized to its maximum width.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> var;
  std::vector<double> acc_mean;
  std::vector<double> acc_var;
  std::vector<int> acc_count;  // calibration batches seen per channel

  explicit NormStats(int channels = 0)
      : mean(channels, 0.0f), var(channels, 1.0f),
        acc_mean(channels, 0.0), acc_var(channels, 0.0), acc_count(channels, 0) {}

  void begin_calibration();
  // Replaces the running statistics with the calibration averages.
  void finish_calibration();
};

// Batch normalisation over the first x.c channels of gamma/beta/stats.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormStats& stats,
               NormMode mode, float momentum = 0.1f, float eps = 1e-5f);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, float k);

// 3x3, stride 2, padding 1 max pooling.
Var max_pool3x3s2(const Var& x);

// Bilinear resize with half-pixel centres (align_corners = false).
Var bilinear_resize(const Var& x, int out_h, int out_w);

// (N,C,H,W) -> (N,C,1,1) mean over H,W.
Var global_avg_pool(const Var& x);
// Softmax over H*W of a single-channel map (N,1,H,W).
Var spatial_softmax(const Var& x);
// (N,C,H,W) weighted by a (N,1,H,W) map, summed over H,W -> (N,C,1,1).
Var attention_pool(const Var& x, const Var& weights);
// x + v and x * v with v broadcast from (N,C,1,1).
Var broadcast_add(const Var& x, const Var& v);
Var broadcast_mul(const Var& x, const Var& v);

// Mean squared error over all elements; returns a (1,1,1,1) scalar.
// Gradients never flow into `target`.
Var mse_loss(const Var& pred, const Var& target);

}  // namespace vipnas::ag
