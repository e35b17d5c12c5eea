#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vipnas/posekit.hpp"
#include "vipnas/supernet.hpp"

namespace vipnas {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 16;
  int n_random = 2;
  double lr = 1e-3;
  std::vector<double> lr_milestones{0.8, 0.92};
  double lr_gamma = 0.1;
  double gt_weight = 0.5;    // non-biggest passes
  double soft_weight = 0.5;  // non-biggest passes
  double sigma = 2.0;
  int propagation = 3;       // T, temporal phase only
  std::uint64_t seed = 0;
  int max_steps = -1;        // stops early when positive
};

enum class PassKind { Biggest, Smallest, Random };
std::string to_string(PassKind kind);

struct PassRecord {
  int step = 0;
  PassKind kind = PassKind::Random;
  double gt = 0.0;     // ground-truth MSE (summed over frames for temporal passes)
  double soft = 0.0;   // MSE to the biggest pass; zero for the biggest pass itself
  double total = 0.0;  // loss that was back-propagated
};

struct TrainLog {
  std::vector<PassRecord> passes;
  std::vector<double> step_loss;  // sum of pass totals per step
  std::vector<double> step_lr;
};

using StepHook = std::function<void(int step, const TrainLog&)>;

// Key-frame phase: every frame of the listed sequences is an independent image,
// supervised on rendered joints only.
TrainLog train_spatial(SuperNet& net, const pose::Dataset& data, const std::vector<int>& train,
                       const TrainConfig& config, const StepHook& hook = {});

// Propagation phase: H^0 from the frozen key network, then T temporal frames
// whose heatmaps feed the next frame without detaching. Also trains a
// network without a fusion module, where frames are independent.
TrainLog train_temporal(StandaloneNet& key_net, SuperNet& net, const pose::Dataset& data,
                        const std::vector<int>& train, const TrainConfig& config,
                        const StepHook& hook = {});

// Runs frames 1..genomes.size() from H^0 and returns every H^t (t >= 1).
// A network without a fusion module ignores H^{t-1} (no-fusion baseline).
// With detach_between_frames the recursion is cut between frames.
std::vector<ag::Var> propagate(SuperNet& net, const ag::Var& key_heatmaps,
                               const std::vector<ag::Var>& images,
                               const std::vector<TemporalGenome>& genomes, ag::NormMode mode,
                               bool detach_between_frames = false);

// Replaces running statistics with batch statistics averaged over the
// given inputs under the genome's sliced forward. Weights are untouched.
void recalibrate_statistics(SuperNet& net, const SpatialGenome& genome,
                            const std::vector<Tensor>& batches);
void recalibrate_statistics(SuperNet& net, const TemporalGenome& genome,
                            const std::vector<Tensor>& images, const std::vector<Tensor>& prev);

// Batches of `size` indices in order; the last batch may be short.
std::vector<std::vector<int>> make_batches(const std::vector<int>& indices, int size);

}  // namespace vipnas
