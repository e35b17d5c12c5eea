#include "vipnas/cost_model.hpp"

#include <algorithm>
#include <numeric>

#include "vipnas/errors.hpp"
#include "vipnas/supernet.hpp"

namespace vipnas {

ConvCost conv_cost(int h_out, int w_out, int kernel, int c_in, int c_out, int groups, bool bias) {
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
    throw ConfigError("conv_cost: group " + std::to_string(groups) + " does not divide (" +
                      std::to_string(c_in) + "," + std::to_string(c_out) + ")");
  }
  const std::int64_t taps = std::int64_t(kernel) * kernel * (c_in / groups) * c_out;
  return {std::int64_t(h_out) * w_out * taps, taps + (bias ? c_out : 0)};
}

std::int64_t CostReport::non_key_flops() const {
  if (per_frame.size() < 2) return 0;
  return std::accumulate(per_frame.begin() + 1, per_frame.end(), std::int64_t{0});
}

namespace {

struct Walker {
  std::vector<LayerCost> layers;

  void conv(const std::string& name, int h, int w, int k, int cin, int cout, int g, bool bias = false) {
    ConvCost c = conv_cost(h, w, k, cin, cout, g, bias);
    layers.push_back({name, c.flops, c.params});
  }
  void norm(const std::string& name, int c) { layers.push_back({name, 0, 2 * std::int64_t(c)}); }
};

void attention_cost(Walker& wk, const std::string& n, AttentionKind kind, int reduction, int h,
                    int w, int c) {
  const int hidden = std::max(1, c / reduction);
  if (kind == AttentionKind::GC) wk.conv(n + ".context", h, w, 1, c, 1, 1);
  wk.conv(n + ".fc1", 1, 1, 1, c, hidden, 1, true);
  wk.conv(n + ".fc2", 1, 1, 1, hidden, c, 1, true);
}

CostReport finish(std::vector<LayerCost> layers) {
  CostReport r;
  r.per_layer = std::move(layers);
  for (const auto& l : r.per_layer) {
    r.total_flops += l.flops;
    r.total_params += l.params;
  }
  r.per_frame = {r.total_flops};
  r.average = double(r.total_flops);
  return r;
}

std::vector<LayerCost> walk(const SearchSpace& space, const SpatialGenome& g, int height, int width,
                            int joints, const TemporalGenome* tg) {
  auto r = validate(g, space);
  if (!r.ok()) throw ConfigError("cost of invalid genome: " + r.describe());
  if (height % 4 != 0 || width % 4 != 0) throw DataError("input size must be a multiple of 4");
  const LevelSizes sizes = level_sizes(space, height, width);
  Walker wk;
  const int ks = *std::max_element(space.stem.kernel_choices.begin(), space.stem.kernel_choices.end());
  const int sh = (height - 1) / space.stem.stride + 1, sw = (width - 1) / space.stem.stride + 1;
  wk.conv("stem.conv", sh, sw, ks, 3, g.stem_width, 1);
  wk.norm("stem.bn", g.stem_width);
  int in = g.stem_width;
  int ih = sizes.stem_h, iw = sizes.stem_w;
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const StageGene& gene = g.stages[s];
    const int w = gene.width, o = w * space.expansion;
    const auto [oh, ow] = sizes.stages[s];
    for (int d = 0; d < gene.depth; ++d) {
      const std::string n = "stages." + std::to_string(s) + "." + std::to_string(d);
      wk.conv(n + ".conv1", d == 0 ? ih : oh, d == 0 ? iw : ow, 1, in, w, 1);
      wk.norm(n + ".bn1", w);
      wk.conv(n + ".conv2", oh, ow, gene.kernel, w, w, gene.group);
      wk.norm(n + ".bn2", w);
      wk.conv(n + ".conv3", oh, ow, 1, w, o, 1);
      wk.norm(n + ".bn3", o);
      if (d == 0) {
        wk.conv(n + ".shortcut", oh, ow, 1, in, o, 1);
        wk.norm(n + ".shortcut_bn", o);
      }
      if (gene.attention) {
        attention_cost(wk, n + ".attention", space.attention, space.attention_reduction, oh, ow, o);
      }
      in = o;
    }
    ih = oh;
    iw = ow;
    if (tg && tg->fusion_stage == static_cast<int>(s) + 1) {
      const std::string n = "fusion." + std::to_string(s + 1);
      wk.conv(n + ".project", height / 4, width / 4, 1, joints, o, 1, true);
      if (tg->fusion_op == FusionOp::Cat) {
        wk.conv(n + ".cat_feat", oh, ow, 1, o, o, 1, true);
        wk.conv(n + ".cat_heat", oh, ow, 1, o, o, 1);
      } else {
        wk.conv(n + ".merge", oh, ow, 1, o, o, 1, true);
      }
    }
  }
  for (std::size_t l = 0; l < space.head.size(); ++l) {
    const HeadGene& h = g.head[l];
    const std::string n = "head." + std::to_string(l);
    const auto [oh, ow] = sizes.head[l];
    wk.conv(n + ".deconv", oh, ow, h.kernel, in, h.width, h.group);
    wk.norm(n + ".bn", h.width);
    in = h.width;
  }
  const auto [fh, fw] = sizes.head.back();
  wk.conv("final", fh, fw, 1, in, joints, 1, true);
  return std::move(wk.layers);
}

}  // namespace

CostReport genome_cost(const SearchSpace& space, const SpatialGenome& genome, int height, int width,
                       int joints) {
  return finish(walk(space, genome, height, width, joints, nullptr));
}

CostReport genome_cost(const SearchSpace& space, const TemporalGenome& genome, int height, int width,
                       int joints) {
  if (genome.fusion_stage < 1 || genome.fusion_stage > space.fusion_stage_count()) {
    throw ConfigError("fusion stage out of range");
  }
  return finish(walk(space, genome.spatial, height, width, joints, &genome));
}

CostReport video_cost(const SearchSpace& space, const VideoGenome& genome, int height, int width,
                      int joints) {
  if (genome.frames.empty()) throw ConfigError("video genome needs at least one non-key frame");
  CostReport out;
  auto append = [&](const CostReport& r, const std::string& prefix) {
    for (auto l : r.per_layer) {
      l.name = prefix + l.name;
      out.per_layer.push_back(std::move(l));
    }
    out.per_frame.push_back(r.total_flops);
    out.total_flops += r.total_flops;
    out.total_params += r.total_params;
  };
  append(genome_cost(space, genome.key, height, width, joints), "frame0.");
  for (std::size_t t = 0; t < genome.frames.size(); ++t) {
    append(genome_cost(space, genome.frames[t], height, width, joints),
           "frame" + std::to_string(t + 1) + ".");
  }
  out.average = frame_average(out.per_frame);
  return out;
}

double frame_average(const std::vector<std::int64_t>& per_frame) {
  if (per_frame.empty()) return 0.0;
  return double(std::accumulate(per_frame.begin(), per_frame.end(), std::int64_t{0})) /
         double(per_frame.size());
}

bool feasible(const CostReport& video, std::int64_t budget) { return video.non_key_flops() <= budget; }

std::int64_t frame_flops(const SearchSpace& space, const TemporalGenome& genome, int height,
                         int width, int joints, bool fusion) {
  if (!fusion) return genome_cost(space, genome.spatial, height, width, joints).total_flops;
  return genome_cost(space, genome, height, width, joints).total_flops;
}

}  // namespace vipnas
