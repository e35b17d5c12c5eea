#include "vipnas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vipnas/errors.hpp"
#include "vipnas/optim.hpp"

namespace vipnas {

std::string to_string(PassKind kind) {
  switch (kind) {
    case PassKind::Biggest: return "biggest";
    case PassKind::Smallest: return "smallest";
    case PassKind::Random: return "random";
  }
  return "?";
}

std::vector<std::vector<int>> make_batches(const std::vector<int>& indices, int size) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < indices.size(); i += size) {
    out.emplace_back(indices.begin() + i, indices.begin() + std::min(indices.size(), i + size));
  }
  return out;
}

namespace {

void check_config(const TrainConfig& c) {
  if (c.batch_size < 1 || c.epochs < 1 || c.n_random < 0) throw ConfigError("invalid training sizes");
  if (c.gt_weight < 0 || c.soft_weight < 0) throw ConfigError("loss weights must be nonnegative");
  if (c.lr <= 0) throw ConfigError("learning rate must be positive");
}

double scalar(const ag::Var& v) { return v->value.data()[0]; }

void check_finite(double loss, int step, PassKind kind) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " at step " << step << " in the " << to_string(kind) << " pass";
    throw DivergenceError(os.str());
  }
}

struct Schedule {
  const TrainConfig& config;
  int total;
  double lr(int step) const {
    return step_decay_lr(config.lr, step, total, config.lr_milestones, config.lr_gamma);
  }
};

int total_steps(const TrainConfig& c, std::size_t items) {
  const int per_epoch = static_cast<int>((items + c.batch_size - 1) / c.batch_size);
  int total = per_epoch * c.epochs;
  if (c.max_steps > 0) total = std::min(total, c.max_steps);
  return total;
}

}  // namespace

TrainLog train_spatial(SuperNet& net, const pose::Dataset& data, const std::vector<int>& train,
                       const TrainConfig& config, const StepHook& hook) {
  check_config(config);
  if (train.empty()) throw DataError("empty training split");
  // Every (sequence, frame) pair is one image.
  std::vector<std::pair<int, int>> items;
  for (int s : train)
    for (int t = 0; t < data.samples.at(s).frame_count(); ++t) items.emplace_back(s, t);
  Rng rng(config.seed);
  Adam opt(net.parameters(), config.lr);
  const SearchSpace& space = net.space();
  const SpatialGenome big = corner(space, Corner::Biggest), small = corner(space, Corner::Smallest);
  const Schedule sched{config, total_steps(config, items.size())};
  TrainLog log;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs && step < sched.total; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t b = 0; b < items.size() && step < sched.total; b += config.batch_size) {
      const std::size_t e = std::min(items.size(), b + config.batch_size);
      std::vector<Tensor> imgs, tgts;
      for (std::size_t i = b; i < e; ++i) {
        imgs.push_back(pose::image_batch(data, {items[i].first}, items[i].second));
        tgts.push_back(pose::target_batch(data, {items[i].first}, items[i].second, config.sigma, pose::kVisible));
      }
      ag::Var x = ag::constant(Tensor::stack(imgs));
      ag::Var y = ag::constant(Tensor::stack(tgts));
      opt.set_lr(sched.lr(step));

      std::vector<std::pair<PassKind, SpatialGenome>> passes{{PassKind::Biggest, big}, {PassKind::Smallest, small}};
      for (int r = 0; r < config.n_random; ++r) passes.emplace_back(PassKind::Random, sample_random(space, rng));

      ag::Var soft;
      double step_total = 0.0;
      for (const auto& [kind, genome] : passes) {
        ag::Var pred = net.forward_key(x, genome, ag::NormMode::Train);
        ag::Var gt = ag::mse_loss(pred, y);
        PassRecord rec{step, kind, scalar(gt), 0.0, 0.0};
        ag::Var loss = gt;
        if (kind == PassKind::Biggest) {
          soft = ag::detach(pred);
        } else {
          ag::Var sl = ag::mse_loss(pred, soft);
          rec.soft = scalar(sl);
          loss = ag::add(ag::scale(gt, float(config.gt_weight)), ag::scale(sl, float(config.soft_weight)));
        }
        rec.total = scalar(loss);
        check_finite(rec.total, step, kind);
        ag::backward(loss);
        log.passes.push_back(rec);
        step_total += rec.total;
      }
      opt.step();
      log.step_loss.push_back(step_total);
      log.step_lr.push_back(opt.lr());
      if (hook) hook(step, log);
      ++step;
    }
  }
  return log;
}

std::vector<ag::Var> propagate(SuperNet& net, const ag::Var& key_heatmaps,
                               const std::vector<ag::Var>& images,
                               const std::vector<TemporalGenome>& genomes, ag::NormMode mode,
                               bool detach_between_frames) {
  if (images.size() != genomes.size()) throw DataError("one genome per non-key frame is required");
  std::vector<ag::Var> out;
  ag::Var prev = key_heatmaps;
  for (std::size_t t = 0; t < images.size(); ++t) {
    ag::Var input = detach_between_frames ? ag::detach(prev) : prev;
    ag::Var h = net.forward_frame(images[t], input, genomes[t], mode);
    out.push_back(h);
    prev = h;
  }
  return out;
}

TrainLog train_temporal(StandaloneNet& key_net, SuperNet& net, const pose::Dataset& data,
                        const std::vector<int>& train, const TrainConfig& config, const StepHook& hook) {
  check_config(config);
  const int T = config.propagation;
  if (T < 2) throw ConfigError("temporal training needs T >= 2");
  if (train.empty()) throw DataError("empty training split");
  for (int s : train) {
    if (data.samples.at(s).frame_count() < T + 1) {
      throw DataError("sequence " + std::to_string(s) + " has " +
                      std::to_string(data.samples.at(s).frame_count()) + " frames, need " +
                      std::to_string(T + 1));
    }
  }
  std::vector<int> order = train;
  Rng rng(config.seed);
  Adam opt(net.parameters(), config.lr);
  const SearchSpace& space = net.space();
  const SpatialGenome big = corner(space, Corner::Biggest), small = corner(space, Corner::Smallest);
  const Schedule sched{config, total_steps(config, order.size())};
  TrainLog log;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs && step < sched.total; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto& batch : make_batches(order, config.batch_size)) {
      if (step >= sched.total) break;
      std::vector<ag::Var> imgs, tgts;
      for (int t = 1; t <= T; ++t) {
        imgs.push_back(ag::constant(pose::image_batch(data, batch, t)));
        tgts.push_back(ag::constant(pose::target_batch(data, batch, t, config.sigma, pose::kOccluded)));
      }
      ag::Var h0;
      {
        ag::NoGradGuard ng;
        h0 = ag::constant(key_net.forward(ag::constant(pose::image_batch(data, batch, 0)), ag::NormMode::Eval)->value);
      }
      opt.set_lr(sched.lr(step));

      std::vector<std::pair<PassKind, std::vector<TemporalGenome>>> passes;
      for (PassKind kind : {PassKind::Biggest, PassKind::Smallest}) {
        std::vector<TemporalGenome> g;
        for (int t = 0; t < T; ++t) g.push_back(with_random_fusion(space, kind == PassKind::Biggest ? big : small, rng));
        passes.emplace_back(kind, std::move(g));
      }
      for (int r = 0; r < config.n_random; ++r) {
        std::vector<TemporalGenome> g;
        for (int t = 0; t < T; ++t) g.push_back(sample_temporal(space, rng));
        passes.emplace_back(PassKind::Random, std::move(g));
      }

      std::vector<ag::Var> soft(T);
      double step_total = 0.0;
      for (const auto& [kind, genomes] : passes) {
        std::vector<ag::Var> preds = propagate(net, h0, imgs, genomes, ag::NormMode::Train);
        PassRecord rec{step, kind, 0.0, 0.0, 0.0};
        ag::Var loss;
        for (int t = 0; t < T; ++t) {
          ag::Var gt = ag::mse_loss(preds[t], tgts[t]);
          rec.gt += scalar(gt);
          ag::Var term = gt;
          if (kind == PassKind::Biggest) {
            soft[t] = ag::detach(preds[t]);
          } else {
            ag::Var sl = ag::mse_loss(preds[t], soft[t]);
            rec.soft += scalar(sl);
            term = ag::add(ag::scale(gt, float(config.gt_weight)), ag::scale(sl, float(config.soft_weight)));
          }
          loss = loss ? ag::add(loss, term) : term;
        }
        rec.total = scalar(loss);
        check_finite(rec.total, step, kind);
        ag::backward(loss);
        log.passes.push_back(rec);
        step_total += rec.total;
      }
      opt.step();
      log.step_loss.push_back(step_total);
      log.step_lr.push_back(opt.lr());
      if (hook) hook(step, log);
      ++step;
    }
  }
  return log;
}

namespace {

void calibrate(SuperNet& net, const std::function<void(std::size_t)>& run, std::size_t n) {
  if (n == 0) throw DataError("recalibration needs at least one batch");
  auto norms = net.norms();
  for (auto* bn : norms) bn->stats().begin_calibration();
  ag::NoGradGuard ng;
  for (std::size_t i = 0; i < n; ++i) run(i);
  for (auto* bn : norms) bn->stats().finish_calibration();
}

}  // namespace

void recalibrate_statistics(SuperNet& net, const SpatialGenome& genome, const std::vector<Tensor>& batches) {
  calibrate(net, [&](std::size_t i) {
    net.forward_key(ag::constant(batches[i]), genome, ag::NormMode::Calibrate);
  }, batches.size());
}

void recalibrate_statistics(SuperNet& net, const TemporalGenome& genome, const std::vector<Tensor>& images,
                            const std::vector<Tensor>& prev) {
  if (images.size() != prev.size()) throw DataError("image and heatmap batch counts differ");
  calibrate(net, [&](std::size_t i) {
    net.forward_frame(ag::constant(images[i]), ag::constant(prev[i]), genome, ag::NormMode::Calibrate);
  }, images.size());
}

}  // namespace vipnas
