#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vipnas/autograd.hpp"
#include "vipnas/errors.hpp"
#include "vipnas/genome.hpp"
#include "vipnas/ops.hpp"

namespace vipnas {

// Read-only window into a shared (O_max, I_max, K_max, K_max) weight:
// output channels [0, out), input channels [0, in), spatial
// [offset, offset + kernel) in both dims. No data is copied.
struct WeightView {
  const Tensor* full = nullptr;
  int out = 0;
  int in = 0;
  int kernel = 0;
  int offset = 0;

  float at(int o, int i, int ky, int kx) const {
    return full->at(o, i, offset + ky, offset + kx);
  }
  // Compact (out, in, kernel, kernel) copy.
  Tensor materialize() const;
};

// Centre K x K window. K must not exceed K_max and must share its parity.
WeightView slice_kernel(const Tensor& full, int kernel);
// First W output filters and first W_prev input channels of a view.
WeightView slice_width(const WeightView& view, int width, int width_prev);

struct SliceSpec {
  int out = 0;     // W
  int in = 0;      // W_prev, total input channels
  int kernel = 1;  // K
  int groups = 1;  // G, must divide both out and in
};

// Grouped convolution over the (W, W_prev/G, K, K) tailored slice: every group
// reads its own W_prev/G input channels through the same first W_prev/G
// weight slots, and the G group outputs are concatenated.
ag::Var grouped_forward(const ag::Var& input, const ag::Var& weight, const ag::Var* bias,
                        const SliceSpec& spec, int stride, int pad);

class ElasticConv {
 public:
  ElasticConv() = default;
  ElasticConv(std::string name, int out_max, int in_max, int k_max, int stride,
              bool deconv, bool bias, Rng& rng, float init_std = -1.0f);

  // Ordinary (or grouped) convolution with centre-aligned padding.
  ag::Var forward(const ag::Var& x, const SliceSpec& spec) const;
  // Transposed convolution cropped to (out_h, out_w).
  ag::Var forward_deconv(const ag::Var& x, const SliceSpec& spec, int out_h, int out_w) const;

  int out_max() const { return weight_.value().n(); }
  int in_max() const { return weight_.value().c(); }
  int kernel_max() const { return weight_.value().h(); }
  int stride() const { return stride_; }
  bool is_deconv() const { return deconv_; }
  bool has_bias() const { return bias_.has_value(); }

  ag::Parameter& weight() { return weight_; }
  const ag::Parameter& weight() const { return weight_; }
  ag::Parameter* bias() { return bias_ ? &*bias_ : nullptr; }
  const ag::Parameter* bias() const { return bias_ ? &*bias_ : nullptr; }

  void collect(std::vector<ag::Parameter*>& out);

 private:
  void check_spec(const SliceSpec& spec) const;

  ag::Parameter weight_;
  std::optional<ag::Parameter> bias_;
  int stride_ = 1;
  bool deconv_ = false;
};

// Normalisation with full-width affine parameters, sliced to the first C.
class ElasticBatchNorm {
 public:
  ElasticBatchNorm() = default;
  ElasticBatchNorm(std::string name, int channels);

  ag::Var forward(const ag::Var& x, ag::NormMode mode);

  ag::Parameter& gamma() { return gamma_; }
  ag::Parameter& beta() { return beta_; }
  const ag::Parameter& gamma() const { return gamma_; }
  const ag::Parameter& beta() const { return beta_; }
  ag::NormStats& stats() { return stats_; }
  const ag::NormStats& stats() const { return stats_; }
  const std::string& name() const { return name_; }

  void collect(std::vector<ag::Parameter*>& out);

 private:
  std::string name_;
  ag::Parameter gamma_;
  ag::Parameter beta_;
  ag::NormStats stats_;
};

// Squeeze-excitation or global-context block over the first C channels.
// Output shape always equals input shape.
class AttentionModule {
 public:
  AttentionModule() = default;
  AttentionModule(std::string name, AttentionKind kind, int channels_max, int reduction, Rng& rng);

  ag::Var forward(const ag::Var& x) const;
  int hidden(int channels) const { return std::max(1, channels / reduction_); }
  AttentionKind kind() const { return kind_; }
  int reduction() const { return reduction_; }

  // Context 1x1 (GC only), squeeze FC and excite FC.
  ElasticConv& context() { return context_; }
  ElasticConv& fc1() { return fc1_; }
  ElasticConv& fc2() { return fc2_; }
  const ElasticConv& context() const { return context_; }
  const ElasticConv& fc1() const { return fc1_; }
  const ElasticConv& fc2() const { return fc2_; }

  void collect(std::vector<ag::Parameter*>& out);

 private:
  AttentionKind kind_ = AttentionKind::None;
  int reduction_ = 16;
  ElasticConv context_;
  ElasticConv fc1_;
  ElasticConv fc2_;
};

// Identity when disabled.
ag::Var elastic_attention_forward(const ag::Var& x, bool enabled, const AttentionModule& module);

// Bottleneck: 1x1 entry, KxK grouped middle (carries the stride), 1x1 exit,
// optional attention, residual add. Block 0 of each stage owns a projection
// shortcut because elastic widths change the channel count.
class ElasticBottleneck {
 public:
  ElasticBottleneck() = default;
  ElasticBottleneck(const std::string& name, int in_max, const StageRange& range,
                    int expansion, AttentionKind attention, int reduction,
                    bool first, Rng& rng);

  ag::Var forward(const ag::Var& x, const StageGene& gene, int expansion, ag::NormMode mode);

  ElasticConv conv1, conv2, conv3;
  ElasticBatchNorm bn1, bn2, bn3;
  std::optional<ElasticConv> shortcut;
  std::optional<ElasticBatchNorm> shortcut_bn;
  std::optional<AttentionModule> attention;
  int stride = 1;

  void collect(std::vector<ag::Parameter*>& out);
  void collect_norms(std::vector<ElasticBatchNorm*>& out);
};

// Runs blocks[0 .. depth-1]; the remaining blocks are never touched.
template <class Block, class Run>
ag::Var elastic_depth_forward(std::span<Block> blocks, int depth, ag::Var x, Run&& run) {
  if (depth < 1 || depth > static_cast<int>(blocks.size())) {
    throw ConfigError("depth " + std::to_string(depth) + " outside [1," +
                      std::to_string(blocks.size()) + "]");
  }
  for (int d = 0; d < depth; ++d) x = run(blocks[d], x);
  return x;
}

}  // namespace vipnas
