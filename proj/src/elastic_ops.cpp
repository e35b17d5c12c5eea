#include "vipnas/elastic_ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace vipnas {

Tensor WeightView::materialize() const {
  Tensor t(out, in, kernel, kernel);
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i)
      for (int y = 0; y < kernel; ++y)
        for (int x = 0; x < kernel; ++x) t.at(o, i, y, x) = at(o, i, y, x);
  return t;
}

WeightView slice_kernel(const Tensor& full, int kernel) {
  const int k_max = full.h();
  if (kernel < 1 || kernel > k_max) {
    throw ConfigError("kernel " + std::to_string(kernel) + " exceeds K_max " + std::to_string(k_max));
  }
  if ((k_max - kernel) % 2 != 0) {
    throw ConfigError("kernel " + std::to_string(kernel) + " cannot be centre-aligned in K_max " +
                      std::to_string(k_max));
  }
  return WeightView{&full, full.n(), full.c(), kernel, (k_max - kernel) / 2};
}

WeightView slice_width(const WeightView& view, int width, int width_prev) {
  if (width < 1 || width > view.out || width_prev < 1 || width_prev > view.in) {
    throw ConfigError("width slice (" + std::to_string(width) + "," + std::to_string(width_prev) +
                      ") outside (" + std::to_string(view.out) + "," + std::to_string(view.in) + ")");
  }
  WeightView v = view;
  v.out = width;
  v.in = width_prev;
  return v;
}

namespace {

void check_groups(const SliceSpec& spec) {
  if (spec.groups < 1 || spec.out % spec.groups != 0 || spec.in % spec.groups != 0) {
    throw ConfigError("group " + std::to_string(spec.groups) + " does not divide (" +
                      std::to_string(spec.out) + "," + std::to_string(spec.in) + ")");
  }
}

Tensor normal(Shape s, float stddev, Rng& rng) {
  Tensor t(s);
  std::normal_distribution<float> d(0.0f, stddev);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

}  // namespace

ag::Var grouped_forward(const ag::Var& input, const ag::Var& weight, const ag::Var* bias,
                        const SliceSpec& spec, int stride, int pad) {
  check_groups(spec);
  // Validates kernel parity and the tailored width bounds.
  slice_width(slice_kernel(weight->value, spec.kernel), spec.out, spec.in / spec.groups);
  ag::ConvSlice s{spec.out, spec.in / spec.groups, spec.kernel, spec.groups, stride, pad};
  return ag::conv2d(input, weight, bias, s);
}

ElasticConv::ElasticConv(std::string name, int out_max, int in_max, int k_max, int stride,
                         bool deconv, bool bias, Rng& rng, float init_std)
    : stride_(stride), deconv_(deconv) {
  if (init_std < 0.0f) init_std = std::sqrt(2.0f / static_cast<float>(in_max * k_max * k_max));
  weight_ = ag::make_parameter(name + ".weight", normal({out_max, in_max, k_max, k_max}, init_std, rng));
  if (bias) bias_ = ag::make_parameter(name + ".bias", Tensor(1, out_max, 1, 1));
}

void ElasticConv::check_spec(const SliceSpec& spec) const {
  check_groups(spec);
  slice_width(slice_kernel(weight_.value(), spec.kernel), spec.out, spec.in / spec.groups);
}

ag::Var ElasticConv::forward(const ag::Var& x, const SliceSpec& spec) const {
  if (deconv_) throw UsageError("forward() called on a deconvolution layer");
  check_spec(spec);
  const ag::Var* b = bias_ ? &bias_->var : nullptr;
  return grouped_forward(x, weight_.var, b, spec, stride_, ag::conv_padding(spec.kernel));
}

ag::Var ElasticConv::forward_deconv(const ag::Var& x, const SliceSpec& spec, int out_h,
                                    int out_w) const {
  if (!deconv_) throw UsageError("forward_deconv() called on a convolution layer");
  check_spec(spec);
  const ag::Var* b = bias_ ? &bias_->var : nullptr;
  ag::ConvSlice s{spec.out, spec.in / spec.groups, spec.kernel, spec.groups, stride_,
                  ag::deconv_padding(spec.kernel, stride_)};
  return ag::conv_transpose2d(x, weight_.var, b, s, out_h, out_w);
}

void ElasticConv::collect(std::vector<ag::Parameter*>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(&*bias_);
}

ElasticBatchNorm::ElasticBatchNorm(std::string name, int channels)
    : name_(std::move(name)),
      gamma_(ag::make_parameter(name_ + ".gamma", Tensor(1, channels, 1, 1, 1.0f))),
      beta_(ag::make_parameter(name_ + ".beta", Tensor(1, channels, 1, 1, 0.0f))),
      stats_(channels) {}

ag::Var ElasticBatchNorm::forward(const ag::Var& x, ag::NormMode mode) {
  return ag::batch_norm(x, gamma_.var, beta_.var, stats_, mode);
}

void ElasticBatchNorm::collect(std::vector<ag::Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

AttentionModule::AttentionModule(std::string name, AttentionKind kind, int channels_max,
                                 int reduction, Rng& rng)
    : kind_(kind), reduction_(reduction) {
  const int h = hidden(channels_max);
  if (kind == AttentionKind::GC) {
    context_ = ElasticConv(name + ".context", 1, channels_max, 1, 1, false, false, rng);
  }
  fc1_ = ElasticConv(name + ".fc1", h, channels_max, 1, 1, false, true, rng);
  // GC starts as identity (zero transform); SE starts with a 0.5 gate.
  fc2_ = ElasticConv(name + ".fc2", channels_max, h, 1, 1, false, true, rng, 0.0f);
}

ag::Var AttentionModule::forward(const ag::Var& x) const {
  const int c = x->value.c();
  const int h = hidden(c);
  ag::Var pooled;
  if (kind_ == AttentionKind::GC) {
    ag::Var logits = context_.forward(x, {1, c, 1, 1});
    pooled = ag::attention_pool(x, ag::spatial_softmax(logits));
  } else if (kind_ == AttentionKind::SE) {
    pooled = ag::global_avg_pool(x);
  } else {
    return x;
  }
  ag::Var t = ag::relu(fc1_.forward(pooled, {h, c, 1, 1}));
  t = fc2_.forward(t, {c, h, 1, 1});
  if (kind_ == AttentionKind::GC) return ag::broadcast_add(x, t);
  return ag::broadcast_mul(x, ag::sigmoid(t));
}

void AttentionModule::collect(std::vector<ag::Parameter*>& out) {
  if (kind_ == AttentionKind::GC) context_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

ag::Var elastic_attention_forward(const ag::Var& x, bool enabled, const AttentionModule& module) {
  if (!enabled) return x;
  return module.forward(x);
}

ElasticBottleneck::ElasticBottleneck(const std::string& name, int in_max, const StageRange& range,
                                     int expansion, AttentionKind attention_kind, int reduction,
                                     bool first, Rng& rng) {
  const int w = range.width.max;
  const int k = *std::max_element(range.kernel_choices.begin(), range.kernel_choices.end());
  const int out = w * expansion;
  stride = first ? range.stride : 1;
  conv1 = ElasticConv(name + ".conv1", w, first ? in_max : out, 1, 1, false, false, rng);
  bn1 = ElasticBatchNorm(name + ".bn1", w);
  conv2 = ElasticConv(name + ".conv2", w, w, k, stride, false, false, rng);
  bn2 = ElasticBatchNorm(name + ".bn2", w);
  conv3 = ElasticConv(name + ".conv3", out, w, 1, 1, false, false, rng);
  bn3 = ElasticBatchNorm(name + ".bn3", out);
  bn3.gamma().value().fill(0.0f);  // residual branch starts silent
  if (first) {
    shortcut = ElasticConv(name + ".shortcut", out, in_max, 1, stride, false, false, rng);
    shortcut_bn = ElasticBatchNorm(name + ".shortcut_bn", out);
  }
  if (range.attention_allowed && attention_kind != AttentionKind::None) {
    attention = AttentionModule(name + ".attention", attention_kind, out, reduction, rng);
  }
}

ag::Var ElasticBottleneck::forward(const ag::Var& x, const StageGene& gene, int expansion,
                                   ag::NormMode mode) {
  const int in = x->value.c();
  const int w = gene.width;
  const int out = w * expansion;
  ag::Var y = ag::relu(bn1.forward(conv1.forward(x, {w, in, 1, 1}), mode));
  y = ag::relu(bn2.forward(conv2.forward(y, {w, w, gene.kernel, gene.group}), mode));
  y = bn3.forward(conv3.forward(y, {out, w, 1, 1}), mode);
  if (gene.attention) {
    if (!attention) throw ConfigError("attention selected for a stage that does not allow it");
    y = elastic_attention_forward(y, true, *attention);
  }
  ag::Var skip = x;
  if (shortcut) skip = shortcut_bn->forward(shortcut->forward(x, {out, in, 1, 1}), mode);
  return ag::relu(ag::add(y, skip));
}

void ElasticBottleneck::collect(std::vector<ag::Parameter*>& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  conv3.collect(out);
  bn3.collect(out);
  if (shortcut) {
    shortcut->collect(out);
    shortcut_bn->collect(out);
  }
  if (attention) attention->collect(out);
}

void ElasticBottleneck::collect_norms(std::vector<ElasticBatchNorm*>& out) {
  out.push_back(&bn1);
  out.push_back(&bn2);
  out.push_back(&bn3);
  if (shortcut_bn) out.push_back(&*shortcut_bn);
}

}  // namespace vipnas
