#include "vipnas/searcher.hpp"

#include <algorithm>
#include <set>

#include "vipnas/errors.hpp"
#include "vipnas/trainer.hpp"

namespace vipnas {

namespace {

std::vector<Tensor> frame_batches(const EvalData& eval, const std::vector<int>& seqs, int t) {
  std::vector<Tensor> out;
  for (const auto& b : make_batches(seqs, eval.batch_size)) out.push_back(pose::image_batch(*eval.data, b, t));
  return out;
}

std::vector<Tensor> run_batches(const std::function<ag::Var(std::size_t)>& f, std::size_t n) {
  ag::NoGradGuard ng;
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(f(i)->value);
  return out;
}

// Adds one OKS value per (sequence, frame) to `oks_values`.
void score_frame(const EvalData& eval, const std::vector<Tensor>& heatmaps, int t, int min_visibility,
                 std::vector<double>& oks_values, pose::PckCounter* pck) {
  const auto batches = make_batches(eval.validation, eval.batch_size);
  const auto& cfg = eval.data->config;
  for (std::size_t b = 0; b < batches.size(); ++b)
    for (std::size_t n = 0; n < batches[b].size(); ++n) {
      const auto& s = eval.data->samples[batches[b][n]];
      std::vector<int> vis = s.visibility[t];
      for (auto& v : vis)
        if (v < min_visibility) v = pose::kUnlabelled;
      const pose::Decoded d = pose::decode(heatmaps[b], static_cast<int>(n));
      if (auto o = pose::oks(d.keypoints, s.keypoints[t], vis, s.scale[t])) oks_values.push_back(*o);
      if (pck) pck->add(d.keypoints, s.keypoints[t], vis, 0.05 * std::max(cfg.height, cfg.width));
    }
}

void check_eval(const EvalData& eval) {
  if (!eval.data || eval.calibration.empty() || eval.validation.empty()) {
    throw DataError("evaluation needs a dataset with calibration and validation sequences");
  }
}

}  // namespace

double evaluate_spatial(SuperNet& net, const SpatialGenome& genome, const EvalData& eval) {
  check_eval(eval);
  const int frames = eval.data->samples[eval.validation[0]].frame_count();
  if (eval.recalibrate) {
    std::vector<Tensor> calib;
    for (int t = 0; t < frames; ++t)
      for (auto& b : frame_batches(eval, eval.calibration, t)) calib.push_back(std::move(b));
    recalibrate_statistics(net, genome, calib);
  }
  std::vector<double> oks_values;
  for (int t = 0; t < frames; ++t) {
    const auto imgs = frame_batches(eval, eval.validation, t);
    const auto heat = run_batches([&](std::size_t i) {
      return net.forward_key(ag::constant(imgs[i]), genome, ag::NormMode::Eval);
    }, imgs.size());
    score_frame(eval, heat, t, pose::kVisible, oks_values, nullptr);
  }
  return pose::average_precision(oks_values);
}

StandaloneNet calibrated_key_network(SuperNet& net, const SpatialGenome& genome, const EvalData& eval) {
  check_eval(eval);
  if (eval.recalibrate) recalibrate_statistics(net, genome, frame_batches(eval, eval.calibration, 0));
  return materialize(net, genome);
}

VideoScore evaluate_video(const StandaloneNet& key_net, SuperNet& net,
                          const std::vector<TemporalGenome>& frames, const EvalData& eval) {
  check_eval(eval);
  StandaloneNet key = key_net;
  auto key_heat = [&](const std::vector<int>& seqs) {
    const auto imgs = frame_batches(eval, seqs, 0);
    return run_batches([&](std::size_t i) { return key.forward(ag::constant(imgs[i]), ag::NormMode::Eval); },
                       imgs.size());
  };
  std::vector<Tensor> prev_cal = key_heat(eval.calibration);
  std::vector<Tensor> prev_val = key_heat(eval.validation);
  VideoScore score;
  std::vector<double> pooled;
  pose::PckCounter pck;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const int t = static_cast<int>(f) + 1;
    const auto cal_imgs = frame_batches(eval, eval.calibration, t);
    if (eval.recalibrate) recalibrate_statistics(net, frames[f], cal_imgs, prev_cal);
    StandaloneNet frame_net = materialize_frame(net, frames[f]);
    prev_cal = run_batches([&](std::size_t i) {
      return frame_net.forward_frame(ag::constant(cal_imgs[i]), ag::constant(prev_cal[i]), ag::NormMode::Eval);
    }, cal_imgs.size());
    const auto val_imgs = frame_batches(eval, eval.validation, t);
    prev_val = run_batches([&](std::size_t i) {
      return frame_net.forward_frame(ag::constant(val_imgs[i]), ag::constant(prev_val[i]), ag::NormMode::Eval);
    }, val_imgs.size());
    std::vector<double> frame_oks;
    score_frame(eval, prev_val, t, pose::kOccluded, frame_oks, &pck);
    score.frame_ap.push_back(pose::average_precision(frame_oks));
    pooled.insert(pooled.end(), frame_oks.begin(), frame_oks.end());
  }
  score.ap = pose::average_precision(pooled);
  score.pck = pck.value();
  return score;
}

// ---- search ----

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.flops != b.flops) return a.flops < b.flops;
  return a.key < b.key;
}

namespace {

void check_search(const SearchConfig& c) {
  if (c.budget <= 0) throw ConfigError("budget C must be positive");
  if (c.samples < 1) throw ConfigError("sample count M must be at least 1");
  if (c.propagation < 1) throw ConfigError("propagation length T must be at least 1");
}

SearchResult finish(SearchResult r, const SearchConfig& c) {
  std::sort(r.ranked.begin(), r.ranked.end(), ranks_before);
  r.seed = c.seed;
  r.samples = c.samples;
  r.budget = c.budget;
  return r;
}

std::int64_t frame_cost(const SearchSpace& space, const SearchConfig& c, const TemporalGenome& g) {
  return frame_flops(space, g, c.height, c.width, c.joints, c.fusion);
}

std::string video_key(const std::vector<TemporalGenome>& frames, bool fusion) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& f : frames) j.push_back(fusion ? to_json(f) : to_json(f.spatial));
  return j.dump();
}

// Draws until M distinct feasible candidates or 100*M draws.
template <class Draw, class Score>
SearchResult rejection_search(const SearchConfig& c, std::int64_t minimum, Draw&& draw, Score&& score) {
  SearchResult r;
  r.minimum = minimum;
  if (c.budget < minimum) throw InfeasibleBudget(c.budget, minimum);
  std::set<std::string> seen;
  const int cap = 100 * c.samples;
  while (static_cast<int>(r.ranked.size()) < c.samples && r.draws < cap) {
    ++r.draws;
    Candidate cand = draw();
    if (cand.flops > c.budget || !seen.insert(cand.key).second) continue;
    r.ranked.push_back(std::move(cand));
  }
  r.exhausted = static_cast<int>(r.ranked.size()) < c.samples;
  for (auto& cand : r.ranked) cand.score = score(cand);
  return r;
}

}  // namespace

TemporalGenome cheapest_frame(const SearchSpace& space, const SearchConfig& c) {
  const SpatialGenome small = corner(space, Corner::Smallest);
  TemporalGenome best{small, FusionOp::Add, 1};
  std::int64_t best_cost = frame_cost(space, c, best);
  for (FusionOp op : {FusionOp::Add, FusionOp::Mul, FusionOp::Cat})
    for (int s = 1; s <= space.fusion_stage_count(); ++s) {
      TemporalGenome g{small, op, s};
      const auto cost = frame_cost(space, c, g);
      if (cost < best_cost) {
        best = g;
        best_cost = cost;
      }
    }
  return best;
}

SearchResult search_spatial(const SearchSpace& space, const SearchConfig& c, const SpatialEvaluator& evaluate) {
  check_search(c);
  Rng rng(c.seed);
  auto cost = [&](const SpatialGenome& g) { return genome_cost(space, g, c.height, c.width, c.joints).total_flops; };
  const std::int64_t minimum = cost(corner(space, Corner::Smallest));
  auto draw = [&] {
    Candidate cand;
    cand.spatial = {sample_random(space, rng)};
    cand.flops = cost(cand.spatial[0]);
    cand.key = genome_key(cand.spatial[0]);
    return cand;
  };
  SearchResult r = rejection_search(c, minimum, draw, [&](const Candidate& cand) { return evaluate(cand.spatial[0]); });
  if (r.ranked.empty()) {
    Candidate cand;
    cand.spatial = {corner(space, Corner::Smallest)};
    cand.flops = minimum;
    cand.key = genome_key(cand.spatial[0]);
    cand.score = evaluate(cand.spatial[0]);
    r.ranked.push_back(cand);
  }
  return finish(std::move(r), c);
}

namespace {

SearchResult video_search(const SearchSpace& space, const SearchConfig& c, const VideoEvaluator& evaluate,
                          bool shared) {
  check_search(c);
  Rng rng(c.seed);
  const TemporalGenome cheap = cheapest_frame(space, c);
  const std::int64_t minimum = c.propagation * frame_cost(space, c, cheap);
  auto make = [&](std::vector<TemporalGenome> frames) {
    Candidate cand;
    for (const auto& f : frames) cand.flops += frame_cost(space, c, f);
    cand.key = video_key(frames, c.fusion);
    cand.frames = std::move(frames);
    return cand;
  };
  auto draw = [&] {
    std::vector<TemporalGenome> frames;
    if (shared) {
      frames.assign(c.propagation, sample_temporal(space, rng));
    } else {
      for (int t = 0; t < c.propagation; ++t) frames.push_back(sample_temporal(space, rng));
    }
    return make(std::move(frames));
  };
  SearchResult r = rejection_search(c, minimum, draw, [&](const Candidate& cand) { return evaluate(cand.frames); });
  if (r.ranked.empty()) {
    Candidate cand = make(std::vector<TemporalGenome>(c.propagation, cheap));
    cand.score = evaluate(cand.frames);
    r.ranked.push_back(cand);
  }
  return finish(std::move(r), c);
}

}  // namespace

SearchResult search_temporal(const SearchSpace& space, const SearchConfig& c, const VideoEvaluator& evaluate) {
  return video_search(space, c, evaluate, false);
}

SearchResult search_shared(const SearchSpace& space, const SearchConfig& c, const VideoEvaluator& evaluate) {
  return video_search(space, c, evaluate, true);
}

nlohmann::json to_json(const SearchResult& r) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : r.ranked) {
    nlohmann::json j{{"score", c.score}, {"flops", c.flops}};
    if (!c.spatial.empty()) j["genome"] = to_json(c.spatial[0]);
    if (!c.frames.empty()) {
      j["frames"] = nlohmann::json::array();
      for (const auto& f : c.frames) j["frames"].push_back(to_json(f));
    }
    cands.push_back(j);
  }
  return {{"seed", r.seed},       {"samples", r.samples}, {"budget", r.budget},
          {"minimum", r.minimum}, {"draws", r.draws},     {"exhausted", r.exhausted},
          {"candidates", cands}};
}

}  // namespace vipnas
