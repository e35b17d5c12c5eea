#include "vipnas/supernet.hpp"

#include <algorithm>

namespace vipnas {

namespace {

int max_kernel(const StageRange& r) {
  return *std::max_element(r.kernel_choices.begin(), r.kernel_choices.end());
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

void set_identity(ElasticConv& conv) {
  Tensor& w = conv.weight().value();
  w.fill(0.0f);
  for (int i = 0; i < std::min(w.n(), w.c()); ++i) w.at(i, i, 0, 0) = 1.0f;
}

}  // namespace

LevelSizes level_sizes(const SearchSpace& space, int height, int width) {
  LevelSizes s;
  const int k = max_kernel(space.stem);
  int h = ag::conv_out_size(height, k, space.stem.stride, k / 2);
  int w = ag::conv_out_size(width, k, space.stem.stride, k / 2);
  h = ag::conv_out_size(h, 3, 2, 1);
  w = ag::conv_out_size(w, 3, 2, 1);
  s.stem_h = h;
  s.stem_w = w;
  int level = space.stem.stride * 2;
  for (const auto& st : space.stages) {
    h = ceil_div(h, st.stride);
    w = ceil_div(w, st.stride);
    level *= st.stride;
    s.stages.emplace_back(h, w);
  }
  for (const auto& hd : space.head) {
    level /= hd.stride;
    s.head.emplace_back(ceil_div(height, level), ceil_div(width, level));
  }
  return s;
}

int merge_input_channels(FusionOp op, int channels) {
  return op == FusionOp::Cat ? 2 * channels : channels;
}

FusionModule::FusionModule(const SearchSpace& space, int joints, Rng& rng) : joints_(joints) {
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const int c = space.stages[s].width.max * space.expansion;
    const std::string n = "fusion." + std::to_string(s + 1);
    StageConvs sc;
    sc.project = ElasticConv(n + ".project", c, joints, 1, 1, false, true, rng, 0.01f);
    sc.project.bias()->value().fill(1.0f);
    sc.merge = ElasticConv(n + ".merge", c, c, 1, 1, false, true, rng);
    set_identity(sc.merge);
    sc.cat_feat = ElasticConv(n + ".cat_feat", c, c, 1, 1, false, true, rng);
    set_identity(sc.cat_feat);
    sc.cat_heat = ElasticConv(n + ".cat_heat", c, c, 1, 1, false, false, rng, 0.01f);
    stages_.push_back(std::move(sc));
  }
}

ag::Var FusionModule::fuse(const ag::Var& features, const ag::Var& heatmaps, FusionOp op,
                           int stage) const {
  if (stage < 1 || stage > static_cast<int>(stages_.size())) {
    throw ConfigError("fusion stage " + std::to_string(stage) + " out of range");
  }
  const StageConvs& sc = stages_[stage - 1];
  const Tensor& f = features->value;
  const int c = f.c();
  ag::Var p = sc.project.forward(heatmaps, {c, joints_, 1, 1});
  p = ag::bilinear_resize(p, f.h(), f.w());
  switch (op) {
    case FusionOp::Add:
      return sc.merge.forward(ag::add(features, p), {c, c, 1, 1});
    case FusionOp::Mul:
      return sc.merge.forward(ag::mul(features, p), {c, c, 1, 1});
    case FusionOp::Cat:
      return ag::add(sc.cat_feat.forward(features, {c, c, 1, 1}),
                     sc.cat_heat.forward(p, {c, c, 1, 1}));
  }
  throw ConfigError("unknown fusion op");
}

void FusionModule::collect(std::vector<ag::Parameter*>& out) {
  for (auto& sc : stages_) {
    sc.project.collect(out);
    sc.merge.collect(out);
    sc.cat_feat.collect(out);
    sc.cat_heat.collect(out);
  }
}

SuperNet::SuperNet(SearchSpace space, int joints, bool with_fusion, std::uint64_t seed)
    : space_(std::move(space)), joints_(joints) {
  space_.check();
  if (joints < 1) throw ConfigError("joint count must be positive");
  Rng rng(seed);
  const StageRange& stem = space_.stem;
  stem_conv = ElasticConv("stem.conv", stem.width.max, 3, max_kernel(stem), stem.stride, false, false, rng);
  stem_bn = ElasticBatchNorm("stem.bn", stem.width.max);
  int in_max = stem.width.max;
  for (std::size_t s = 0; s < space_.stages.size(); ++s) {
    const StageRange& r = space_.stages[s];
    std::vector<ElasticBottleneck> blocks;
    for (int b = 0; b < r.depth.max; ++b) {
      blocks.emplace_back("stages." + std::to_string(s) + "." + std::to_string(b), in_max, r,
                          space_.expansion, space_.attention, space_.attention_reduction, b == 0, rng);
    }
    stages.push_back(std::move(blocks));
    in_max = r.width.max * space_.expansion;
  }
  for (std::size_t l = 0; l < space_.head.size(); ++l) {
    const StageRange& r = space_.head[l];
    const std::string n = "head." + std::to_string(l);
    head_deconvs.emplace_back(n + ".deconv", r.width.max, in_max, max_kernel(r), r.stride, true, false, rng);
    head_bns.emplace_back(n + ".bn", r.width.max);
    in_max = r.width.max;
  }
  final_conv = ElasticConv("final", joints, in_max, 1, 1, false, true, rng, 0.001f);
  if (with_fusion) fusion_.emplace(space_, joints, rng);
}

void SuperNet::bind(const SpatialGenome& genome) {
  auto r = validate(genome, space_);
  if (!r.ok()) throw ConfigError("cannot bind invalid genome: " + r.describe());
  bound_ = genome;
}

void SuperNet::check_input(const ag::Var& image) const {
  const Shape& s = image->value.shape();
  if (s.c != 3 || s.h % 4 != 0 || s.w % 4 != 0 || s.h <= 0 || s.w <= 0) {
    throw DataError("image batch must be (N,3,H,W) with H,W multiples of 4, got " + s.str());
  }
}

ag::Var SuperNet::forward_key(const ag::Var& image, ag::NormMode mode) {
  if (!bound_) throw UsageError("forward_key called before a genome was bound");
  return run(image, *bound_, mode, nullptr, nullptr);
}

ag::Var SuperNet::forward_key(const ag::Var& image, const SpatialGenome& genome, ag::NormMode mode) {
  return run(image, genome, mode, nullptr, nullptr);
}

ag::Var SuperNet::forward_temporal(const ag::Var& image, const ag::Var& prev_heatmaps,
                                   const TemporalGenome& genome, ag::NormMode mode) {
  if (!fusion_) throw UsageError("forward_temporal called on a network without a fusion module");
  const Shape& img = image->value.shape();
  const Shape& h = prev_heatmaps->value.shape();
  if (h.n != img.n || h.c != joints_ || h.h * 4 != img.h || h.w * 4 != img.w) {
    throw DataError("previous heatmaps " + h.str() + " do not match image " + img.str());
  }
  return run(image, genome.spatial, mode, &prev_heatmaps, &genome);
}

ag::Var SuperNet::forward_frame(const ag::Var& image, const ag::Var& prev_heatmaps,
                               const TemporalGenome& genome, ag::NormMode mode) {
  if (!fusion_) return run(image, genome.spatial, mode, nullptr, nullptr);
  return forward_temporal(image, prev_heatmaps, genome, mode);
}

ag::Var SuperNet::run(const ag::Var& image, const SpatialGenome& g, ag::NormMode mode,
                      const ag::Var* prev, const TemporalGenome* tg) {
  check_input(image);
  const LevelSizes sizes = level_sizes(space_, image->value.h(), image->value.w());
  ag::Var x = stem_conv.forward(image, {g.stem_width, 3, stem_conv.kernel_max(), 1});
  x = ag::max_pool3x3s2(ag::relu(stem_bn.forward(x, mode)));
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageGene& gene = g.stages[s];
    x = elastic_depth_forward(std::span<ElasticBottleneck>(stages[s]), gene.depth, x,
                              [&](ElasticBottleneck& b, const ag::Var& in) {
                                return b.forward(in, gene, space_.expansion, mode);
                              });
    if (tg && tg->fusion_stage == static_cast<int>(s) + 1) {
      x = fusion_->fuse(x, *prev, tg->fusion_op, tg->fusion_stage);
    }
  }
  for (std::size_t l = 0; l < head_deconvs.size(); ++l) {
    const HeadGene& h = g.head[l];
    x = head_deconvs[l].forward_deconv(x, {h.width, x->value.c(), h.kernel, h.group},
                                       sizes.head[l].first, sizes.head[l].second);
    x = ag::relu(head_bns[l].forward(x, mode));
  }
  return final_conv.forward(x, {joints_, x->value.c(), 1, 1});
}

std::vector<ag::Parameter*> SuperNet::parameters() {
  std::vector<ag::Parameter*> out;
  stem_conv.collect(out);
  stem_bn.collect(out);
  for (auto& st : stages)
    for (auto& b : st) b.collect(out);
  for (std::size_t l = 0; l < head_deconvs.size(); ++l) {
    head_deconvs[l].collect(out);
    head_bns[l].collect(out);
  }
  final_conv.collect(out);
  if (fusion_) fusion_->collect(out);
  return out;
}

std::map<std::string, ag::Parameter*> SuperNet::named_parameters() {
  std::map<std::string, ag::Parameter*> out;
  for (auto* p : parameters()) out[p->name] = p;
  return out;
}

std::vector<ElasticBatchNorm*> SuperNet::norms() {
  std::vector<ElasticBatchNorm*> out{&stem_bn};
  for (auto& st : stages)
    for (auto& b : st) b.collect_norms(out);
  for (auto& bn : head_bns) out.push_back(&bn);
  return out;
}

std::map<std::string, ag::NormStats*> SuperNet::named_norm_stats() {
  std::map<std::string, ag::NormStats*> out;
  for (auto* n : norms()) out[n->name()] = &n->stats();
  return out;
}

int SuperNet::copy_from(SuperNet& other) {
  int copied = 0;
  auto mine = named_parameters();
  for (auto& [name, p] : other.named_parameters()) {
    auto it = mine.find(name);
    if (it == mine.end() || !(it->second->value().shape() == p->value().shape())) continue;
    it->second->value() = p->value();
    ++copied;
  }
  auto my_stats = named_norm_stats();
  for (auto& [name, st] : other.named_norm_stats()) {
    auto it = my_stats.find(name);
    if (it == my_stats.end() || it->second->mean.size() != st->mean.size()) continue;
    *it->second = *st;
    ++copied;
  }
  return copied;
}

// ---- materialisation ----

namespace {

StandaloneNet::Conv compact(const ElasticConv& conv, const SliceSpec& spec) {
  StandaloneNet::Conv c;
  const WeightView v = slice_width(slice_kernel(conv.weight().value(), spec.kernel), spec.out,
                                   spec.in / spec.groups);
  c.weight = ag::constant(v.materialize());
  if (conv.bias()) {
    Tensor b(1, spec.out, 1, 1);
    for (int i = 0; i < spec.out; ++i) b.data()[i] = conv.bias()->value().data()[i];
    c.bias = ag::constant(std::move(b));
  }
  c.groups = spec.groups;
  c.stride = conv.stride();
  c.deconv = conv.is_deconv();
  return c;
}

StandaloneNet::Norm compact(const ElasticBatchNorm& bn, int channels) {
  StandaloneNet::Norm n;
  Tensor g(1, channels, 1, 1), b(1, channels, 1, 1);
  n.stats = ag::NormStats(channels);
  for (int i = 0; i < channels; ++i) {
    g.data()[i] = bn.gamma().value().data()[i];
    b.data()[i] = bn.beta().value().data()[i];
    n.stats.mean[i] = bn.stats().mean[i];
    n.stats.var[i] = bn.stats().var[i];
  }
  n.gamma = ag::constant(std::move(g));
  n.beta = ag::constant(std::move(b));
  return n;
}

StandaloneNet::Attention compact(const AttentionModule& m, int channels) {
  StandaloneNet::Attention a;
  a.kind = m.kind();
  const int h = m.hidden(channels);
  if (m.kind() == AttentionKind::GC) a.context = compact(m.context(), {1, channels, 1, 1});
  a.fc1 = compact(m.fc1(), {h, channels, 1, 1});
  a.fc2 = compact(m.fc2(), {channels, h, 1, 1});
  return a;
}

ag::Var run_conv(const StandaloneNet::Conv& c, const ag::Var& x) {
  const Tensor& w = c.weight->value;
  ag::ConvSlice s{w.n(), w.c(), w.h(), c.groups, c.stride, ag::conv_padding(w.h())};
  return ag::conv2d(x, c.weight, c.bias ? &c.bias : nullptr, s);
}

ag::Var run_deconv(const StandaloneNet::Conv& c, const ag::Var& x, int oh, int ow) {
  const Tensor& w = c.weight->value;
  ag::ConvSlice s{w.n(), w.c(), w.h(), c.groups, c.stride, ag::deconv_padding(w.h(), c.stride)};
  return ag::conv_transpose2d(x, c.weight, c.bias ? &c.bias : nullptr, s, oh, ow);
}

ag::Var run_norm(StandaloneNet::Norm& n, const ag::Var& x, ag::NormMode mode) {
  return ag::batch_norm(x, n.gamma, n.beta, n.stats, mode);
}

ag::Var run_attention(const StandaloneNet::Attention& a, const ag::Var& x) {
  ag::Var pooled = a.kind == AttentionKind::GC
                       ? ag::attention_pool(x, ag::spatial_softmax(run_conv(*a.context, x)))
                       : ag::global_avg_pool(x);
  ag::Var t = run_conv(a.fc2, ag::relu(run_conv(a.fc1, pooled)));
  if (a.kind == AttentionKind::GC) return ag::broadcast_add(x, t);
  return ag::broadcast_mul(x, ag::sigmoid(t));
}

std::int64_t count(const StandaloneNet::Conv& c) {
  return static_cast<std::int64_t>(c.weight->value.numel()) + (c.bias ? c.bias->value.numel() : 0);
}

std::int64_t count(const StandaloneNet::Norm& n) {
  return static_cast<std::int64_t>(n.gamma->value.numel() + n.beta->value.numel());
}

}  // namespace

StandaloneNet materialize(const SuperNet& net, const SpatialGenome& g) {
  auto r = validate(g, net.space());
  if (!r.ok()) throw ConfigError("cannot materialize invalid genome: " + r.describe());
  StandaloneNet out;
  out.space = net.space();
  out.joints = net.joints();
  out.stem = compact(net.stem_conv, {g.stem_width, 3, net.stem_conv.kernel_max(), 1});
  out.stem_bn = compact(net.stem_bn, g.stem_width);
  int in = g.stem_width;
  const int e = net.space().expansion;
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    const StageGene& gene = g.stages[s];
    const int w = gene.width, o = w * e;
    std::vector<StandaloneNet::Block> blocks;
    for (int d = 0; d < gene.depth; ++d) {
      const ElasticBottleneck& src = net.stages[s][d];
      StandaloneNet::Block b;
      b.conv1 = compact(src.conv1, {w, in, 1, 1});
      b.bn1 = compact(src.bn1, w);
      b.conv2 = compact(src.conv2, {w, w, gene.kernel, gene.group});
      b.bn2 = compact(src.bn2, w);
      b.conv3 = compact(src.conv3, {o, w, 1, 1});
      b.bn3 = compact(src.bn3, o);
      if (src.shortcut) {
        b.shortcut = compact(*src.shortcut, {o, in, 1, 1});
        b.shortcut_bn = compact(*src.shortcut_bn, o);
      }
      if (gene.attention) b.attention = compact(*src.attention, o);
      blocks.push_back(std::move(b));
      in = o;
    }
    out.stages.push_back(std::move(blocks));
  }
  for (std::size_t l = 0; l < net.head_deconvs.size(); ++l) {
    const HeadGene& h = g.head[l];
    out.head.push_back(compact(net.head_deconvs[l], {h.width, in, h.kernel, h.group}));
    out.head_bns.push_back(compact(net.head_bns[l], h.width));
    in = h.width;
  }
  out.final_conv = compact(net.final_conv, {net.joints(), in, 1, 1});
  return out;
}

StandaloneNet materialize(const SuperNet& net, const TemporalGenome& g) {
  if (!net.has_fusion()) throw UsageError("temporal genome needs a network with a fusion module");
  auto r = validate(g, net.space());
  if (!r.ok()) throw ConfigError("cannot materialize invalid genome: " + r.describe());
  StandaloneNet out = materialize(net, g.spatial);
  const auto& sc = net.fusion().stages()[g.fusion_stage - 1];
  const int c = stage_output_channels(net.space(), g.spatial, g.fusion_stage - 1);
  StandaloneNet::Fusion f;
  f.op = g.fusion_op;
  f.stage = g.fusion_stage;
  f.project = compact(sc.project, {c, net.joints(), 1, 1});
  if (g.fusion_op == FusionOp::Cat) {
    f.merge = compact(sc.cat_feat, {c, c, 1, 1});
    f.cat_heat = compact(sc.cat_heat, {c, c, 1, 1});
  } else {
    f.merge = compact(sc.merge, {c, c, 1, 1});
  }
  out.fusion = std::move(f);
  return out;
}

StandaloneNet materialize_frame(const SuperNet& net, const TemporalGenome& g) {
  return net.has_fusion() ? materialize(net, g) : materialize(net, g.spatial);
}

ag::Var StandaloneNet::forward(const ag::Var& image, ag::NormMode mode) {
  if (fusion) throw UsageError("temporal network needs previous heatmaps");
  return run(image, nullptr, mode);
}

ag::Var StandaloneNet::forward(const ag::Var& image, const ag::Var& prev, ag::NormMode mode) {
  if (!fusion) throw UsageError("key-frame network takes no previous heatmaps");
  return run(image, &prev, mode);
}

ag::Var StandaloneNet::forward_frame(const ag::Var& image, const ag::Var& prev, ag::NormMode mode) {
  return run(image, fusion ? &prev : nullptr, mode);
}

ag::Var StandaloneNet::run(const ag::Var& image, const ag::Var* prev, ag::NormMode mode) {
  const LevelSizes sizes = level_sizes(space, image->value.h(), image->value.w());
  ag::Var x = ag::max_pool3x3s2(ag::relu(run_norm(stem_bn, run_conv(stem, image), mode)));
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (auto& b : stages[s]) {
      ag::Var y = ag::relu(run_norm(b.bn1, run_conv(b.conv1, x), mode));
      y = ag::relu(run_norm(b.bn2, run_conv(b.conv2, y), mode));
      y = run_norm(b.bn3, run_conv(b.conv3, y), mode);
      if (b.attention) y = run_attention(*b.attention, y);
      ag::Var skip = b.shortcut ? run_norm(*b.shortcut_bn, run_conv(*b.shortcut, x), mode) : x;
      x = ag::relu(ag::add(y, skip));
    }
    if (fusion && fusion->stage == static_cast<int>(s) + 1) {
      ag::Var p = ag::bilinear_resize(run_conv(fusion->project, *prev), x->value.h(), x->value.w());
      switch (fusion->op) {
        case FusionOp::Add: x = run_conv(fusion->merge, ag::add(x, p)); break;
        case FusionOp::Mul: x = run_conv(fusion->merge, ag::mul(x, p)); break;
        case FusionOp::Cat: x = ag::add(run_conv(fusion->merge, x), run_conv(*fusion->cat_heat, p)); break;
      }
    }
  }
  for (std::size_t l = 0; l < head.size(); ++l) {
    x = run_deconv(head[l], x, sizes.head[l].first, sizes.head[l].second);
    x = ag::relu(run_norm(head_bns[l], x, mode));
  }
  return run_conv(final_conv, x);
}

std::int64_t StandaloneNet::parameter_count() const {
  std::int64_t n = count(stem) + count(stem_bn);
  for (const auto& st : stages)
    for (const auto& b : st) {
      n += count(b.conv1) + count(b.conv2) + count(b.conv3);
      n += count(b.bn1) + count(b.bn2) + count(b.bn3);
      if (b.shortcut) n += count(*b.shortcut) + count(*b.shortcut_bn);
      if (b.attention) {
        if (b.attention->context) n += count(*b.attention->context);
        n += count(b.attention->fc1) + count(b.attention->fc2);
      }
    }
  for (std::size_t l = 0; l < head.size(); ++l) n += count(head[l]) + count(head_bns[l]);
  n += count(final_conv);
  if (fusion) {
    n += count(fusion->project) + count(fusion->merge);
    if (fusion->cat_heat) n += count(*fusion->cat_heat);
  }
  return n;
}

}  // namespace vipnas
