#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vipnas/tensor.hpp"

namespace vipnas::pose {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Visibility flags: 2 rendered, 1 labelled but hidden, 0 unlabelled.
enum : int { kUnlabelled = 0, kOccluded = 1, kVisible = 2 };

struct DataConfig {
  int joints = 5;
  int height = 64;
  int width = 48;
  int propagation = 3;  // T: non-key frames per sequence
  int sequences = 64;
  double occlusion_rate = 0.3;
  double max_velocity = 3.0;  // bound on per-frame joint displacement, pixels
  double jitter = 0.4;
  int radius = 3;
  std::uint64_t seed = 0;
};

struct VideoSample {
  int height = 0;
  int width = 0;
  // frames[t] is planar RGB (3, H, W), t = 0 is the key frame.
  std::vector<std::vector<std::uint8_t>> frames;
  std::vector<std::vector<Point>> keypoints;  // [t][j]
  std::vector<std::vector<int>> visibility;   // [t][j]
  std::vector<double> scale;                  // s per frame
  std::vector<bool> occluded_run;             // [j], sequence contains a hidden run

  int frame_count() const { return static_cast<int>(frames.size()); }
  int joints() const { return keypoints.empty() ? 0 : static_cast<int>(keypoints[0].size()); }
};

struct Dataset {
  DataConfig config;
  std::vector<VideoSample> samples;
};

Dataset generate(const DataConfig& config);

// Frames of the listed samples at time t as a normalised (N,3,H,W) batch.
Tensor image_batch(const Dataset& data, const std::vector<int>& indices, int t);

// (N,J,H/4,W/4) targets; joints with visibility below min_visibility get zero maps.
Tensor target_batch(const Dataset& data, const std::vector<int>& indices, int t, double sigma,
                    int min_visibility);

// Unit-peak Gaussians centred at joint/4 on an (1,J,h,w) grid.
Tensor encode(const std::vector<Point>& keypoints, const std::vector<int>& visibility, int map_h,
              int map_w, double sigma = 2.0, int min_visibility = kOccluded);

struct Decoded {
  std::vector<Point> keypoints;  // image coordinates
  std::vector<double> scores;    // peak values
  std::vector<bool> localized;   // false when a map has no positive value
};

// Decodes sample n of an (N,J,h,w) heatmap batch.
Decoded decode(const Tensor& heatmaps, int n = 0);

// Object keypoint similarity over joints with v > 0. nullopt when none is labelled.
std::optional<double> oks(const std::vector<Point>& pred, const std::vector<Point>& gt,
                          const std::vector<int>& visibility, double scale,
                          const std::vector<double>& k);
std::optional<double> oks(const std::vector<Point>& pred, const std::vector<Point>& gt,
                          const std::vector<int>& visibility, double scale, double k = 0.1);

std::vector<double> default_thresholds();  // 0.50, 0.55, ..., 0.95

// Mean over thresholds of the fraction of instances with OKS >= threshold.
double average_precision(const std::vector<double>& oks_values,
                         const std::vector<double>& thresholds = default_thresholds());

// Fraction of labelled joints within alpha * max(H, W) pixels.
struct PckCounter {
  std::int64_t hits = 0;
  std::int64_t total = 0;
  void add(const std::vector<Point>& pred, const std::vector<Point>& gt,
           const std::vector<int>& visibility, double threshold);
  double value() const { return total ? double(hits) / double(total) : 0.0; }
};
double pck(const std::vector<std::vector<Point>>& preds, const std::vector<std::vector<Point>>& gts,
           const std::vector<std::vector<int>>& visibility, double alpha, int height, int width);

// Directory layout: dataset.json plus seq_NNNNN/{frame_T.ppm, annotations.json}.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace vipnas::pose
