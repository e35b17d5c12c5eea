#include "vipnas/posekit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <array>
#include <cstdio>
#include <random>

#include "json.hpp"
#include "vipnas/errors.hpp"

namespace vipnas::pose {

namespace {

using Rng = std::mt19937_64;

std::array<std::uint8_t, 3> joint_colour(int j, int joints) {
  const double h = 6.0 * j / joints;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const auto up = static_cast<std::uint8_t>(255 * f), down = static_cast<std::uint8_t>(255 * (1 - f));
  switch (sector) {
    case 0: return {255, up, 0};
    case 1: return {down, 255, 0};
    case 2: return {0, 255, up};
    case 3: return {0, down, 255};
    case 4: return {up, 0, 255};
    default: return {255, 0, down};
  }
}

double instance_scale(const std::vector<Point>& pts, int radius) {
  double x0 = pts[0].x, x1 = x0, y0 = pts[0].y, y1 = y0;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return std::sqrt((x1 - x0 + 2 * radius) * (y1 - y0 + 2 * radius));
}

VideoSample make_sequence(const DataConfig& c, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int frames = c.propagation + 1;
  const double jitter_bound = 2.0 * std::sqrt(2.0) * c.jitter;
  const double speed_max = std::max(0.0, c.max_velocity - jitter_bound);

  // Rigid layout of joints around the origin with a minimum separation.
  const double spread = 0.3 * std::min(c.height, c.width);
  std::vector<Point> offsets;
  for (int j = 0; j < c.joints; ++j) {
    Point p;
    for (int attempt = 0; attempt < 200; ++attempt) {
      p = {(2 * unit(rng) - 1) * spread, (2 * unit(rng) - 1) * spread};
      bool ok = true;
      for (const auto& q : offsets) ok = ok && std::hypot(p.x - q.x, p.y - q.y) >= 2.5 * c.radius;
      if (ok) break;
    }
    offsets.push_back(p);
  }
  const double angle = 2 * M_PI * unit(rng), speed = speed_max * unit(rng);
  const Point v{speed * std::cos(angle), speed * std::sin(angle)};
  std::vector<std::vector<Point>> rel(frames, std::vector<Point>(c.joints));
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < c.joints; ++j) {
      rel[t][j] = {offsets[j].x + v.x * t + (2 * unit(rng) - 1) * c.jitter,
                   offsets[j].y + v.y * t + (2 * unit(rng) - 1) * c.jitter};
    }
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (const auto& f : rel)
    for (const auto& p : f) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  const double m = c.radius + 1;
  const double lo_x = m - x0, hi_x = c.width - 1 - m - x1;
  const double lo_y = m - y0, hi_y = c.height - 1 - m - y1;
  const double cx = hi_x > lo_x ? lo_x + (hi_x - lo_x) * unit(rng) : 0.5 * (lo_x + hi_x);
  const double cy = hi_y > lo_y ? lo_y + (hi_y - lo_y) * unit(rng) : 0.5 * (lo_y + hi_y);

  VideoSample s;
  s.height = c.height;
  s.width = c.width;
  s.keypoints.assign(frames, std::vector<Point>(c.joints));
  s.visibility.assign(frames, std::vector<int>(c.joints, kVisible));
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < c.joints; ++j) {
      Point p{rel[t][j].x + cx, rel[t][j].y + cy};
      p.x = std::clamp(p.x, 0.0, c.width - 1.0);
      p.y = std::clamp(p.y, 0.0, c.height - 1.0);
      s.keypoints[t][j] = p;
    }

  // Hidden runs live in frames 1..T so the key frame always shows every joint.
  s.occluded_run.assign(c.joints, false);
  for (int j = 0; j < c.joints; ++j) {
    if (c.propagation < 1 || unit(rng) >= c.occlusion_rate) continue;
    s.occluded_run[j] = true;
    std::uniform_int_distribution<int> start_d(1, c.propagation);
    const int start = start_d(rng);
    std::uniform_int_distribution<int> len_d(1, c.propagation - start + 1);
    const int len = len_d(rng);
    for (int t = start; t < start + len; ++t) s.visibility[t][j] = kOccluded;
  }

  std::uniform_int_distribution<int> base_d(60, 140), noise_d(-25, 25);
  const int base = base_d(rng);
  const std::size_t plane = std::size_t(c.height) * c.width;
  for (int t = 0; t < frames; ++t) {
    std::vector<std::uint8_t> img(3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
      const int n = base + noise_d(rng);
      for (int ch = 0; ch < 3; ++ch) img[ch * plane + i] = static_cast<std::uint8_t>(std::clamp(n + noise_d(rng) / 3, 0, 255));
    }
    for (int j = 0; j < c.joints; ++j) {
      if (s.visibility[t][j] != kVisible) continue;
      const auto col = joint_colour(j, c.joints);
      const Point p = s.keypoints[t][j];
      for (int y = std::max(0, int(p.y) - c.radius - 1); y <= std::min(c.height - 1, int(p.y) + c.radius + 1); ++y)
        for (int x = std::max(0, int(p.x) - c.radius - 1); x <= std::min(c.width - 1, int(p.x) + c.radius + 1); ++x) {
          if (std::hypot(x - p.x, y - p.y) > c.radius) continue;
          for (int ch = 0; ch < 3; ++ch) img[ch * plane + std::size_t(y) * c.width + x] = col[ch];
        }
    }
    s.frames.push_back(std::move(img));
    s.scale.push_back(instance_scale(s.keypoints[t], c.radius));
  }
  return s;
}

}  // namespace

Dataset generate(const DataConfig& config) {
  if (config.height % 4 != 0 || config.width % 4 != 0 || config.height <= 0 || config.width <= 0) {
    throw ConfigError("image size must be a positive multiple of 4");
  }
  if (config.joints < 1 || config.propagation < 0 || config.sequences < 0) {
    throw ConfigError("joints must be positive and frame/sequence counts non-negative");
  }
  if (config.occlusion_rate < 0.0 || config.occlusion_rate > 1.0) {
    throw ConfigError("occlusion_rate must lie in [0,1]");
  }
  Dataset d;
  d.config = config;
  Rng rng(config.seed);
  for (int i = 0; i < config.sequences; ++i) d.samples.push_back(make_sequence(config, rng));
  return d;
}

Tensor image_batch(const Dataset& data, const std::vector<int>& indices, int t) {
  const int h = data.config.height, w = data.config.width;
  Tensor out(static_cast<int>(indices.size()), 3, h, w);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& px = data.samples.at(indices[n]).frames.at(t);
    float* dst = out.plane(static_cast<int>(n), 0);
    for (std::size_t i = 0; i < px.size(); ++i) dst[i] = (px[i] / 255.0f - 0.5f) / 0.25f;
  }
  return out;
}

Tensor encode(const std::vector<Point>& keypoints, const std::vector<int>& visibility, int map_h,
              int map_w, double sigma, int min_visibility) {
  const int joints = static_cast<int>(keypoints.size());
  Tensor out(1, joints, map_h, map_w);
  for (int j = 0; j < joints; ++j) {
    if (visibility[j] < min_visibility || visibility[j] == kUnlabelled) continue;
    const double cx = keypoints[j].x / 4.0, cy = keypoints[j].y / 4.0;
    for (int y = 0; y < map_h; ++y)
      for (int x = 0; x < map_w; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        out.at(0, j, y, x) = static_cast<float>(std::exp(-d2 / (2 * sigma * sigma)));
      }
  }
  return out;
}

Tensor target_batch(const Dataset& data, const std::vector<int>& indices, int t, double sigma,
                    int min_visibility) {
  const int mh = data.config.height / 4, mw = data.config.width / 4, j = data.config.joints;
  Tensor out(static_cast<int>(indices.size()), j, mh, mw);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& s = data.samples.at(indices[n]);
    Tensor one = encode(s.keypoints.at(t), s.visibility.at(t), mh, mw, sigma, min_visibility);
    std::copy(one.vec().begin(), one.vec().end(), out.plane(static_cast<int>(n), 0));
  }
  return out;
}

Decoded decode(const Tensor& heatmaps, int n) {
  Decoded d;
  const int h = heatmaps.h(), w = heatmaps.w();
  for (int j = 0; j < heatmaps.c(); ++j) {
    const float* m = heatmaps.plane(n, j);
    int best = 0;
    for (int i = 1; i < h * w; ++i)
      if (m[i] > m[best]) best = i;
    const int bx = best % w, by = best / w;
    double x = bx, y = by;
    if (bx > 0 && bx < w - 1) {
      const float diff = m[best + 1] - m[best - 1];
      x += diff > 0 ? 0.25 : (diff < 0 ? -0.25 : 0.0);
    }
    if (by > 0 && by < h - 1) {
      const float diff = m[best + w] - m[best - w];
      y += diff > 0 ? 0.25 : (diff < 0 ? -0.25 : 0.0);
    }
    const bool found = m[best] > 0.0f;
    d.localized.push_back(found);
    d.scores.push_back(found ? m[best] : 0.0);
    d.keypoints.push_back({x * 4.0, y * 4.0});
  }
  return d;
}

std::optional<double> oks(const std::vector<Point>& pred, const std::vector<Point>& gt,
                          const std::vector<int>& visibility, double scale,
                          const std::vector<double>& k) {
  double sum = 0.0;
  int labelled = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (visibility[i] <= 0) continue;
    const double dx = pred[i].x - gt[i].x, dy = pred[i].y - gt[i].y;
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * scale * scale * k[i] * k[i]));
    ++labelled;
  }
  if (labelled == 0) return std::nullopt;
  return sum / labelled;
}

std::optional<double> oks(const std::vector<Point>& pred, const std::vector<Point>& gt,
                          const std::vector<int>& visibility, double scale, double k) {
  return oks(pred, gt, visibility, scale, std::vector<double>(gt.size(), k));
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

double average_precision(const std::vector<double>& oks_values, const std::vector<double>& thresholds) {
  if (oks_values.empty() || thresholds.empty()) return 0.0;
  double acc = 0.0;
  for (double tau : thresholds) {
    const auto hits = std::count_if(oks_values.begin(), oks_values.end(), [&](double o) { return o >= tau; });
    acc += double(hits) / double(oks_values.size());
  }
  return acc / double(thresholds.size());
}

void PckCounter::add(const std::vector<Point>& pred, const std::vector<Point>& gt,
                     const std::vector<int>& visibility, double threshold) {
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (visibility[i] <= 0) continue;
    ++total;
    if (std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y) <= threshold) ++hits;
  }
}

double pck(const std::vector<std::vector<Point>>& preds, const std::vector<std::vector<Point>>& gts,
           const std::vector<std::vector<int>>& visibility, double alpha, int height, int width) {
  PckCounter c;
  const double thr = alpha * std::max(height, width);
  for (std::size_t i = 0; i < gts.size(); ++i) c.add(preds[i], gts[i], visibility[i], thr);
  return c.value();
}

// ---- persistence ----

namespace {

nlohmann::json config_json(const DataConfig& c) {
  return {{"joints", c.joints},       {"height", c.height},
          {"width", c.width},         {"propagation", c.propagation},
          {"sequences", c.sequences}, {"occlusion_rate", c.occlusion_rate},
          {"max_velocity", c.max_velocity}, {"jitter", c.jitter},
          {"radius", c.radius},       {"seed", c.seed}};
}

DataConfig config_from(const nlohmann::json& j) {
  DataConfig c;
  c.joints = j.at("joints");
  c.height = j.at("height");
  c.width = j.at("width");
  c.propagation = j.at("propagation");
  c.sequences = j.at("sequences");
  c.occlusion_rate = j.at("occlusion_rate");
  c.max_velocity = j.at("max_velocity");
  c.jitter = j.at("jitter");
  c.radius = j.at("radius");
  c.seed = j.at("seed");
  return c;
}

void write_ppm(const std::filesystem::path& p, const std::vector<std::uint8_t>& planar, int h, int w) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << "P6\n" << w << " " << h << "\n255\n";
  const std::size_t plane = std::size_t(h) * w;
  std::vector<char> row(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) row[3 * i + c] = static_cast<char>(planar[c * plane + i]);
  f.write(row.data(), static_cast<std::streamsize>(row.size()));
}

std::vector<std::uint8_t> read_ppm(const std::filesystem::path& p, int h, int w) {
  std::ifstream f(p, std::ios::binary);
  std::string magic;
  int fw = 0, fh = 0, maxv = 0;
  f >> magic >> fw >> fh >> maxv;
  if (!f || magic != "P6" || fw != w || fh != h || maxv != 255) throw DataError("bad image " + p.string());
  f.get();
  const std::size_t plane = std::size_t(h) * w;
  std::vector<char> raw(3 * plane);
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!f) throw DataError("truncated image " + p.string());
  std::vector<std::uint8_t> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<std::uint8_t>(raw[3 * i + c]);
  return out;
}

std::string seq_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%05zu", i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"format", "vipnas-pose"},
                             {"version", 1},
                             {"config", config_json(data.config)},
                             {"sequences", data.samples.size()}};
  std::ofstream(dir / "dataset.json") << manifest.dump(2) << "\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const VideoSample& s = data.samples[i];
    const auto sd = dir / seq_name(i);
    std::filesystem::create_directories(sd);
    nlohmann::json ann;
    for (int t = 0; t < s.frame_count(); ++t) {
      write_ppm(sd / ("frame_" + std::to_string(t) + ".ppm"), s.frames[t], s.height, s.width);
      nlohmann::json kp = nlohmann::json::array();
      for (const auto& p : s.keypoints[t]) kp.push_back({p.x, p.y});
      ann["keypoints"].push_back(kp);
      ann["visibility"].push_back(s.visibility[t]);
      ann["scale"].push_back(s.scale[t]);
    }
    ann["occluded_run"] = s.occluded_run;
    std::ofstream(sd / "annotations.json") << ann.dump() << "\n";
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "dataset.json");
  if (!mf) throw DataError("missing " + (dir / "dataset.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "vipnas-pose" || manifest.value("version", 0) != 1) {
    throw DataError("unsupported dataset format in " + dir.string());
  }
  Dataset d;
  d.config = config_from(manifest.at("config"));
  const std::size_t n = manifest.at("sequences");
  for (std::size_t i = 0; i < n; ++i) {
    const auto sd = dir / seq_name(i);
    std::ifstream af(sd / "annotations.json");
    if (!af) throw DataError("missing annotations for " + sd.string());
    const auto ann = nlohmann::json::parse(af);
    VideoSample s;
    s.height = d.config.height;
    s.width = d.config.width;
    const std::size_t frames = ann.at("keypoints").size();
    for (std::size_t t = 0; t < frames; ++t) {
      s.frames.push_back(read_ppm(sd / ("frame_" + std::to_string(t) + ".ppm"), s.height, s.width));
      std::vector<Point> kp;
      for (const auto& p : ann["keypoints"][t]) kp.push_back({p[0].get<double>(), p[1].get<double>()});
      s.keypoints.push_back(std::move(kp));
      s.visibility.push_back(ann["visibility"][t].get<std::vector<int>>());
      s.scale.push_back(ann["scale"][t].get<double>());
    }
    s.occluded_run = ann.at("occluded_run").get<std::vector<bool>>();
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace vipnas::pose
