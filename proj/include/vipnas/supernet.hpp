#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vipnas/elastic_ops.hpp"
#include "vipnas/genome.hpp"

namespace vipnas {

// Spatial sizes along the network for an H x W input.
struct LevelSizes {
  int stem_h = 0, stem_w = 0;  // after stem conv + pool
  std::vector<std::pair<int, int>> stages;
  std::vector<std::pair<int, int>> head;
};
LevelSizes level_sizes(const SearchSpace& space, int height, int width);

// Heatmap projection and merge convs for every fusion stage.
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(const SearchSpace& space, int joints, Rng& rng);

  // Projects heatmaps J -> C_s, resizes to the feature map, fuses, merges.
  ag::Var fuse(const ag::Var& features, const ag::Var& heatmaps, FusionOp op, int stage) const;

  struct StageConvs {
    ElasticConv project;     // J -> C_s, with bias
    ElasticConv merge;       // shared by Add and Mul, C_s -> C_s
    ElasticConv cat_feat;    // feature half of the 2C_s -> C_s Cat merge
    ElasticConv cat_heat;    // heatmap half, no bias
  };
  std::vector<StageConvs>& stages() { return stages_; }
  const std::vector<StageConvs>& stages() const { return stages_; }
  int joints() const { return joints_; }

  void collect(std::vector<ag::Parameter*>& out);

 private:
  int joints_ = 0;
  std::vector<StageConvs> stages_;
};

// Input channels seen by the merge conv for a fused stage of C_s channels.
int merge_input_channels(FusionOp op, int channels);

class SuperNet {
 public:
  SuperNet(SearchSpace space, int joints, bool with_fusion, std::uint64_t seed);
  SuperNet(const SuperNet&) = delete;
  SuperNet& operator=(const SuperNet&) = delete;

  void bind(const SpatialGenome& genome);
  void unbind() { bound_.reset(); }
  const std::optional<SpatialGenome>& bound() const { return bound_; }

  // Uses the bound genome; throws UsageError when none is bound.
  ag::Var forward_key(const ag::Var& image, ag::NormMode mode);
  ag::Var forward_key(const ag::Var& image, const SpatialGenome& genome, ag::NormMode mode);
  ag::Var forward_temporal(const ag::Var& image, const ag::Var& prev_heatmaps,
                           const TemporalGenome& genome, ag::NormMode mode);

  // Non-key frame forward: fused when the network has a fusion module,
  // otherwise the previous heatmaps are ignored and only genome.spatial runs.
  ag::Var forward_frame(const ag::Var& image, const ag::Var& prev_heatmaps,
                        const TemporalGenome& genome, ag::NormMode mode);

  const SearchSpace& space() const { return space_; }
  int joints() const { return joints_; }
  bool has_fusion() const { return fusion_.has_value(); }
  FusionModule& fusion() { return *fusion_; }
  const FusionModule& fusion() const { return *fusion_; }

  std::vector<ag::Parameter*> parameters();
  std::map<std::string, ag::Parameter*> named_parameters();
  std::vector<ElasticBatchNorm*> norms();
  std::map<std::string, ag::NormStats*> named_norm_stats();

  // Copies every same-named, same-shaped parameter and normalisation
  // statistic from `other`. Returns the number of tensors copied.
  int copy_from(SuperNet& other);

  // Layer access for materialisation and tests.
  ElasticConv stem_conv;
  ElasticBatchNorm stem_bn;
  std::vector<std::vector<ElasticBottleneck>> stages;
  std::vector<ElasticConv> head_deconvs;
  std::vector<ElasticBatchNorm> head_bns;
  ElasticConv final_conv;

 private:
  ag::Var run(const ag::Var& image, const SpatialGenome& g, ag::NormMode mode,
              const ag::Var* prev, const TemporalGenome* tg);
  void check_input(const ag::Var& image) const;

  SearchSpace space_;
  int joints_ = 0;
  std::optional<FusionModule> fusion_;
  std::optional<SpatialGenome> bound_;
};

// Compact network holding only the weights selected by one genome.
class StandaloneNet {
 public:
  struct Conv {
    ag::Var weight;
    ag::Var bias;  // may be null
    int groups = 1;
    int stride = 1;
    bool deconv = false;
  };
  struct Norm {
    ag::Var gamma, beta;
    ag::NormStats stats;
  };
  struct Attention {
    AttentionKind kind = AttentionKind::None;
    std::optional<Conv> context;
    Conv fc1, fc2;
  };
  struct Block {
    Conv conv1, conv2, conv3;
    Norm bn1, bn2, bn3;
    std::optional<Conv> shortcut;
    std::optional<Norm> shortcut_bn;
    std::optional<Attention> attention;
  };
  struct Fusion {
    FusionOp op = FusionOp::Add;
    int stage = 1;
    Conv project, merge;
    std::optional<Conv> cat_heat;
  };

  ag::Var forward(const ag::Var& image, ag::NormMode mode = ag::NormMode::Eval);
  ag::Var forward(const ag::Var& image, const ag::Var& prev_heatmaps,
                  ag::NormMode mode = ag::NormMode::Eval);
  // As SuperNet::forward_frame.
  ag::Var forward_frame(const ag::Var& image, const ag::Var& prev_heatmaps,
                        ag::NormMode mode = ag::NormMode::Eval);

  std::int64_t parameter_count() const;
  bool temporal() const { return fusion.has_value(); }

  SearchSpace space;
  int joints = 0;
  Conv stem;
  Norm stem_bn;
  std::vector<std::vector<Block>> stages;
  std::vector<Conv> head;
  std::vector<Norm> head_bns;
  Conv final_conv;
  std::optional<Fusion> fusion;

 private:
  ag::Var run(const ag::Var& image, const ag::Var* prev, ag::NormMode mode);
};

StandaloneNet materialize(const SuperNet& net, const SpatialGenome& genome);
StandaloneNet materialize(const SuperNet& net, const TemporalGenome& genome);
// Temporal genome on a fused network, spatial part only otherwise.
StandaloneNet materialize_frame(const SuperNet& net, const TemporalGenome& genome);

}  // namespace vipnas
