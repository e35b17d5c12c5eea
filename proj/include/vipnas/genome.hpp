#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace vipnas {

using Rng = std::mt19937_64;

struct IntRange {
  int min = 1;
  int max = 1;
  bool operator==(const IntRange&) const = default;
};

// Search step per elastic dimension. Grids anchor at the range minimum; the
// maximum is always included even when the span is not a multiple of the step.
struct SearchSteps {
  int depth = 1;
  int width = 16;
  int kernel = 2;
  int group = 16;
  bool operator==(const SearchSteps&) const = default;
};

// Elastic ranges for one stage (or the stem, or one deconv layer), plus the
// fixed stride the template assigns to it.
struct StageRange {
  IntRange depth{1, 1};
  IntRange width{16, 16};
  std::vector<int> kernel_choices{3};
  IntRange group{1, 1};
  bool attention_allowed = false;
  SearchSteps steps{};
  int stride = 1;

  std::vector<int> depth_grid() const;
  std::vector<int> width_grid() const;
  std::vector<int> group_grid() const;
  bool operator==(const StageRange&) const = default;
};

std::vector<int> step_grid(IntRange range, int step);

enum class AttentionKind { None, SE, GC };
enum class FusionOp { Add, Mul, Cat };

inline constexpr int kFusionOpCount = 3;

std::string to_string(AttentionKind kind);
std::string to_string(FusionOp op);
FusionOp parse_fusion_op(const std::string& s);

// A super-network template: stem, bottleneck stages and deconv head.
struct SearchSpace {
  std::string name;
  StageRange stem;
  std::vector<StageRange> stages;
  std::vector<StageRange> head;
  int expansion = 1;  // bottleneck output = expansion * stage width
  AttentionKind attention = AttentionKind::GC;
  int attention_reduction = 16;

  int fusion_stage_count() const { return static_cast<int>(stages.size()); }
  // Throws ConfigError when ranges or strides are inconsistent.
  void check() const;
  bool operator==(const SearchSpace&) const = default;
};

// ResNet-50 super-network search space (bottleneck stages, GC attention).
SearchSpace resnet50_space();
// Desk-scale space used for 64x48 synthetic experiments.
SearchSpace toy_space();
// Fixed single-point space holding the standard SimpleBaseline ResNet-50
// (expansion 4, plain convolutions, 4x4 deconvs of width 256).
SearchSpace sbl_resnet50_space();
SearchSpace space_by_name(const std::string& name);

struct StageGene {
  int depth = 1;
  int width = 16;
  int kernel = 3;
  int group = 1;
  bool attention = false;
  bool operator==(const StageGene&) const = default;
};

struct HeadGene {
  int width = 16;
  int kernel = 4;
  int group = 1;
  bool operator==(const HeadGene&) const = default;
};

struct SpatialGenome {
  int stem_width = 16;
  std::vector<StageGene> stages;
  std::vector<HeadGene> head;
  bool operator==(const SpatialGenome&) const = default;
};

struct TemporalGenome {
  SpatialGenome spatial;
  FusionOp fusion_op = FusionOp::Add;
  int fusion_stage = 1;  // 1-based, selects F_1..F_S
  bool operator==(const TemporalGenome&) const = default;
};

struct VideoGenome {
  SpatialGenome key;
  std::vector<TemporalGenome> frames;
  int propagation_length() const { return static_cast<int>(frames.size()); }
  bool operator==(const VideoGenome&) const = default;
};

SpatialGenome sbl_resnet50_genome();

// Input channel count seen by each stage / head layer under a genome.
int stage_output_channels(const SearchSpace& space, const SpatialGenome& g, int stage);
int head_input_channels(const SearchSpace& space, const SpatialGenome& g, int layer);

struct Violation {
  std::string field;   // e.g. "stages[1].width"
  int value = 0;
  std::string allowed;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string describe() const;
};

ValidationResult validate(const SpatialGenome& g, const SearchSpace& space);
ValidationResult validate(const TemporalGenome& g, const SearchSpace& space);
ValidationResult validate(const VideoGenome& g, const SearchSpace& space);

// Largest group grid value <= requested that divides every channel count;
// falls back to the smallest dividing grid value above. Throws ConfigError
// when no grid value divides them.
int round_group(const StageRange& range, int requested, std::initializer_list<int> channels);

SpatialGenome sample_random(const SearchSpace& space, Rng& rng);
SpatialGenome sample_random(const SearchSpace& space, std::uint64_t seed);
TemporalGenome sample_temporal(const SearchSpace& space, Rng& rng);
TemporalGenome sample_temporal(const SearchSpace& space, std::uint64_t seed);
// Uniform fusion choice on top of a given spatial genome.
TemporalGenome with_random_fusion(const SearchSpace& space, SpatialGenome spatial, Rng& rng);

enum class Corner { Smallest, Biggest };
SpatialGenome corner(const SearchSpace& space, Corner which);

// (N_O * N_S)^T
std::uint64_t temporal_space_size(int fusion_ops, int fusion_stages, int frames);

// JSON schema:
// {"stem":{"width":int},
//  "stages":[{"depth":int,"width":int,"kernel":int,"group":int,"attention":bool}],
//  "head":[{"width":int,"kernel":int,"group":int}],
//  "fusion":{"op":"add|mul|cat","stage":1-4} | null}
nlohmann::json to_json(const SpatialGenome& g);
nlohmann::json to_json(const TemporalGenome& g);
nlohmann::json to_json(const VideoGenome& g);
nlohmann::json to_json(const SearchSpace& s);
SpatialGenome spatial_from_json(const nlohmann::json& j);
TemporalGenome temporal_from_json(const nlohmann::json& j);
VideoGenome video_from_json(const nlohmann::json& j);
SearchSpace space_from_json(const nlohmann::json& j);

// Canonical compact string, used for lexicographic tie-breaks and dedup.
std::string genome_key(const SpatialGenome& g);
std::string genome_key(const TemporalGenome& g);
std::string genome_key(const VideoGenome& g);

}  // namespace vipnas
