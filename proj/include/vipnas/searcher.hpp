#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vipnas/cost_model.hpp"
#include "vipnas/posekit.hpp"
#include "vipnas/supernet.hpp"

namespace vipnas {

// ---- evaluation ----

struct EvalData {
  const pose::Dataset* data = nullptr;
  std::vector<int> calibration;  // sequences used to recalibrate statistics
  std::vector<int> validation;   // sequences scored
  int batch_size = 32;
  bool recalibrate = true;  // false: score with the stored running statistics
};

struct VideoScore {
  double ap = 0.0;                  // pooled over frames 1..T
  std::vector<double> frame_ap;     // per frame t = 1..T
  double pck = 0.0;                 // alpha = 0.05
};

// Recalibrates for `genome`, then OKS-AP over every frame of the validation
// sequences with only rendered joints labelled.
double evaluate_spatial(SuperNet& net, const SpatialGenome& genome, const EvalData& eval);

// Recalibrates for `genome` on calibration key frames and returns the compact key network.
StandaloneNet calibrated_key_network(SuperNet& net, const SpatialGenome& genome, const EvalData& eval);

// Propagates H^0 from key_net through one network per frame. Each frame's
// statistics are recalibrated on calibration sequences fed by the already
// calibrated earlier frames. Occluded joints are labelled.
VideoScore evaluate_video(const StandaloneNet& key_net, SuperNet& net,
                          const std::vector<TemporalGenome>& frames, const EvalData& eval);

// ---- search ----

struct SearchConfig {
  std::int64_t budget = 0;  // C, MACs
  int samples = 64;         // M
  int propagation = 3;      // T
  std::uint64_t seed = 0;
  int height = 64;
  int width = 48;
  int joints = 5;
  bool fusion = true;       // false: frames cost their spatial part only
};

struct Candidate {
  std::vector<SpatialGenome> spatial;  // spatial search: one entry
  std::vector<TemporalGenome> frames;  // temporal search: T entries
  double score = 0.0;
  std::int64_t flops = 0;  // spatial: genome cost; temporal: sum over t = 1..T
  std::string key;         // canonical JSON
};

struct SearchResult {
  std::vector<Candidate> ranked;  // best first
  int draws = 0;
  bool exhausted = false;  // draw cap reached before M candidates
  std::uint64_t seed = 0;
  int samples = 0;
  std::int64_t budget = 0;
  std::int64_t minimum = 0;  // cheapest achievable cost

  const Candidate& best() const { return ranked.front(); }
};

// Score descending, then FLOPs ascending, then canonical JSON.
bool ranks_before(const Candidate& a, const Candidate& b);

using SpatialEvaluator = std::function<double(const SpatialGenome&)>;
using VideoEvaluator = std::function<double(const std::vector<TemporalGenome>&)>;

SearchResult search_spatial(const SearchSpace& space, const SearchConfig& config,
                            const SpatialEvaluator& evaluate);
// Each frame draws its own genome; sum of frame costs must not exceed C.
SearchResult search_temporal(const SearchSpace& space, const SearchConfig& config,
                             const VideoEvaluator& evaluate);
// One genome replicated over all T frames.
SearchResult search_shared(const SearchSpace& space, const SearchConfig& config,
                           const VideoEvaluator& evaluate);

// Cheapest single-frame genome (smallest corner with the cheapest fusion choice).
TemporalGenome cheapest_frame(const SearchSpace& space, const SearchConfig& config);

nlohmann::json to_json(const SearchResult& r);

}  // namespace vipnas
