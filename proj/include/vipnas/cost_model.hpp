#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vipnas/genome.hpp"

namespace vipnas {

// MAC and parameter counts. Bias, normalisation, activation and resize
// MACs are zero; normalisation affine parameters are counted.
struct ConvCost {
  std::int64_t flops = 0;
  std::int64_t params = 0;
};

// Transposed convolutions are counted with their output size (zero-insertion form).
ConvCost conv_cost(int h_out, int w_out, int kernel, int c_in, int c_out, int groups,
                   bool bias = false);

struct LayerCost {
  std::string name;
  std::int64_t flops = 0;
  std::int64_t params = 0;
};

struct CostReport {
  std::vector<LayerCost> per_layer;
  std::int64_t total_flops = 0;
  std::int64_t total_params = 0;
  std::vector<std::int64_t> per_frame;  // index 0 is the key frame
  double average = 0.0;                 // mean of per_frame

  // Sum of per_frame[1..T].
  std::int64_t non_key_flops() const;
};

CostReport genome_cost(const SearchSpace& space, const SpatialGenome& genome, int height,
                       int width, int joints);
CostReport genome_cost(const SearchSpace& space, const TemporalGenome& genome, int height,
                       int width, int joints);
CostReport video_cost(const SearchSpace& space, const VideoGenome& genome, int height, int width,
                      int joints);

// Mean over key and non-key frames.
double frame_average(const std::vector<std::int64_t>& per_frame);

// Non-key frame budget check: sum over t = 1..T of Flops(arch^t) <= budget.
bool feasible(const CostReport& video, std::int64_t budget);

// FLOPs of one non-key frame. Without fusion only the spatial part runs.
std::int64_t frame_flops(const SearchSpace& space, const TemporalGenome& genome, int height,
                         int width, int joints, bool fusion = true);

}  // namespace vipnas
