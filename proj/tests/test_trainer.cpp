#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "vipnas/errors.hpp"
#include "vipnas/searcher.hpp"
#include "vipnas/trainer.hpp"

using namespace vipnas;

namespace {

pose::Dataset small_data(int sequences, std::uint64_t seed, int propagation = 3) {
  pose::DataConfig c;
  c.sequences = sequences;
  c.seed = seed;
  c.propagation = propagation;
  return pose::generate(c);
}

std::vector<int> range(int lo, int hi) {
  std::vector<int> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

TrainConfig quick(int steps, int n_random, std::uint64_t seed = 1) {
  TrainConfig c;
  c.max_steps = steps;
  c.batch_size = 4;
  c.n_random = n_random;
  c.seed = seed;
  c.lr = 3e-3;
  return c;
}

SearchSpace singleton_space() {
  SearchSpace s = toy_space();
  auto pin = [](StageRange& r) {
    r.depth.min = r.depth.max;
    r.width.min = r.width.max;
    r.kernel_choices = {r.kernel_choices.back()};
    r.group.min = r.group.max = 1;
    r.attention_allowed = false;
  };
  pin(s.stem);
  for (auto& r : s.stages) pin(r);
  for (auto& r : s.head) pin(r);
  return s;
}

void expect_decomposition(const TrainLog& log, const TrainConfig& c) {
  for (const auto& p : log.passes) {
    if (p.kind == PassKind::Biggest) {
      EXPECT_EQ(p.soft, 0.0);
      EXPECT_NEAR(p.total, p.gt, 1e-6 * std::abs(p.gt));
    } else {
      const double expect = c.gt_weight * p.gt + c.soft_weight * p.soft;
      EXPECT_NEAR(p.total, expect, 1e-5 * std::abs(expect) + 1e-9);
      EXPECT_GT(p.soft, 0.0);
    }
  }
}

StandaloneNet fresh_key_net(std::uint64_t seed) {
  SuperNet s(toy_space(), 5, false, seed);
  return materialize(s, corner(toy_space(), Corner::Biggest));
}

}  // namespace

TEST(SpatialTraining, EachStepRunsTwoPlusNRandomPassesInSandwichOrder) {
  const auto data = small_data(6, 1);
  for (int n_random : {0, 1, 2, 3}) {
    SuperNet net(toy_space(), 5, false, 1);
    const TrainLog log = train_spatial(net, data, range(0, 6), quick(3, n_random));
    ASSERT_EQ(log.step_loss.size(), 3u);
    ASSERT_EQ(log.passes.size(), 3u * (2 + n_random));
    for (std::size_t i = 0; i < log.passes.size(); ++i) {
      const auto& p = log.passes[i];
      EXPECT_EQ(p.step, static_cast<int>(i / (2 + n_random)));
      const std::size_t slot = i % (2 + n_random);
      EXPECT_EQ(p.kind, slot == 0 ? PassKind::Biggest : slot == 1 ? PassKind::Smallest : PassKind::Random);
    }
  }
}

TEST(SpatialTraining, LossTermsDecompose) {
  const auto data = small_data(6, 2);
  SuperNet net(toy_space(), 5, false, 2);
  const TrainConfig c = quick(4, 2);
  const TrainLog log = train_spatial(net, data, range(0, 6), c);
  expect_decomposition(log, c);
  for (std::size_t s = 0; s < log.step_loss.size(); ++s) {
    double sum = 0.0;
    for (const auto& p : log.passes)
      if (p.step == static_cast<int>(s)) sum += p.total;
    EXPECT_DOUBLE_EQ(log.step_loss[s], sum);
  }
}

TEST(SpatialTraining, FixedSeedReproducesTheLossTrajectory) {
  const auto data = small_data(6, 3);
  auto run = [&](std::uint64_t seed) {
    SuperNet net(toy_space(), 5, false, 3);
    return train_spatial(net, data, range(0, 6), quick(4, 2, seed)).step_loss;
  };
  const auto a = run(5), b = run(5), c = run(6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SpatialTraining, SingletonSpaceReducesToSupervisedTraining) {
  const auto data = small_data(6, 4);
  SuperNet net(singleton_space(), 5, false, 4);
  const TrainLog log = train_spatial(net, data, range(0, 6), quick(3, 0));
  for (std::size_t i = 0; i < log.passes.size(); i += 2) {
    const auto& big = log.passes[i];
    const auto& small = log.passes[i + 1];
    EXPECT_EQ(small.soft, 0.0);
    EXPECT_EQ(small.gt, big.gt);
    EXPECT_NEAR(small.total, 0.5 * big.gt, 1e-7);
  }
}

TEST(SpatialTraining, MeanLossFallsOverTraining) {
  const auto data = small_data(32, 5);
  SuperNet net(toy_space(), 5, false, 5);
  TrainConfig c = quick(80, 1);
  c.batch_size = 8;
  const TrainLog log = train_spatial(net, data, range(0, 32), c);
  const std::size_t k = log.step_loss.size() / 10;
  const double first = std::accumulate(log.step_loss.begin(), log.step_loss.begin() + k, 0.0);
  const double last = std::accumulate(log.step_loss.end() - k, log.step_loss.end(), 0.0);
  EXPECT_LT(last, first);
}

TEST(SpatialTraining, LearningRateFollowsStepDecay) {
  const auto data = small_data(4, 6);
  SuperNet net(toy_space(), 5, false, 6);
  TrainConfig c = quick(10, 0);
  const TrainLog log = train_spatial(net, data, range(0, 4), c);
  EXPECT_DOUBLE_EQ(log.step_lr.front(), c.lr);
  EXPECT_NEAR(log.step_lr[8], c.lr * 0.1, 1e-12);
  EXPECT_NEAR(log.step_lr[9], c.lr * 0.01, 1e-12);
  EXPECT_DOUBLE_EQ(log.step_lr[7], c.lr);
}

TEST(SpatialTraining, BadInputsAreRejected) {
  const auto data = small_data(2, 7);
  SuperNet net(toy_space(), 5, false, 7);
  TrainConfig c = quick(1, 0);
  EXPECT_THROW(train_spatial(net, data, {}, c), DataError);
  c.lr = 0.0;
  EXPECT_THROW(train_spatial(net, data, {0}, c), ConfigError);
  c = quick(1, 0);
  c.batch_size = 0;
  EXPECT_THROW(train_spatial(net, data, {0}, c), ConfigError);
}

TEST(SpatialTraining, NonFiniteLossRaisesDivergence) {
  const auto data = small_data(2, 8);
  SuperNet net(toy_space(), 5, false, 8);
  net.final_conv.bias()->value().fill(std::numeric_limits<float>::quiet_NaN());
  EXPECT_THROW(train_spatial(net, data, {0, 1}, quick(1, 0)), DivergenceError);
}

TEST(TemporalTraining, SandwichContractAndDeterminism) {
  const auto data = small_data(6, 9);
  StandaloneNet key = fresh_key_net(9);
  const TrainConfig c = quick(3, 2, 9);
  auto run = [&] {
    SuperNet net(toy_space(), 5, true, 9);
    return train_temporal(key, net, data, range(0, 6), c);
  };
  const TrainLog a = run(), b = run();
  ASSERT_EQ(a.passes.size(), 3u * 4u);
  expect_decomposition(a, c);
  EXPECT_EQ(a.step_loss, b.step_loss);
}

TEST(TemporalTraining, KeyNetworkIsBitwiseUnchanged) {
  const auto data = small_data(4, 10);
  StandaloneNet key = fresh_key_net(10);
  ag::Var x = ag::constant(pose::image_batch(data, {0, 1}, 0));
  const Tensor before = key.forward(x)->value;
  const std::vector<float> stem = key.stem.weight->value.vec(), fin = key.final_conv.weight->value.vec();
  const std::vector<float> mean = key.stem_bn.stats.mean;
  SuperNet net(toy_space(), 5, true, 10);
  train_temporal(key, net, data, range(0, 4), quick(2, 1));
  EXPECT_EQ(key.forward(x)->value.vec(), before.vec());
  EXPECT_EQ(key.stem.weight->value.vec(), stem);
  EXPECT_EQ(key.final_conv.weight->value.vec(), fin);
  EXPECT_EQ(key.stem_bn.stats.mean, mean);
}

TEST(TemporalTraining, NoFusionNetworkTrainsFramesIndependently) {
  const auto data = small_data(4, 11);
  StandaloneNet key = fresh_key_net(11);
  SuperNet net(toy_space(), 5, false, 11);
  const TrainLog log = train_temporal(key, net, data, range(0, 4), quick(2, 0));
  EXPECT_EQ(log.passes.size(), 4u);
}

TEST(TemporalTraining, ShortSequencesAndShortHorizonsAreRejected) {
  const auto data = small_data(3, 12, 1);
  StandaloneNet key = fresh_key_net(12);
  SuperNet net(toy_space(), 5, true, 12);
  EXPECT_THROW(train_temporal(key, net, data, {0, 1}, quick(1, 0)), DataError);
  TrainConfig c = quick(1, 0);
  c.propagation = 1;
  EXPECT_THROW(train_temporal(key, net, data, {0, 1}, c), ConfigError);
}

TEST(Propagation, FrameTwoLossReachesFrameOneFusionWeights) {
  const auto data = small_data(2, 13);
  SuperNet net(toy_space(), 5, true, 13);
  Rng rng(13);
  const std::vector<TemporalGenome> genomes{{sample_random(toy_space(), rng), FusionOp::Add, 1},
                                            {sample_random(toy_space(), rng), FusionOp::Mul, 4}};
  const std::vector<ag::Var> imgs{ag::constant(pose::image_batch(data, {0, 1}, 1)),
                                  ag::constant(pose::image_batch(data, {0, 1}, 2))};
  const ag::Var target = ag::constant(pose::target_batch(data, {0, 1}, 2, 2.0, pose::kOccluded));
  const ag::Var h0 = ag::constant(pose::target_batch(data, {0, 1}, 0, 2.0, pose::kOccluded));
  auto probe = [&](bool detach) {
    auto params = net.parameters();
    ag::zero_grad(params);
    auto preds = propagate(net, h0, imgs, genomes, ag::NormMode::Train, detach);
    ag::backward(ag::mse_loss(preds[1], target));
    double g = 0.0;
    for (auto* p : params)
      if (p->name == "fusion.1.project.weight" && p->var->has_grad())
        for (float v : p->var->grad.vec()) g += std::abs(v);
    return g;
  };
  EXPECT_GT(probe(false), 0.0);
  EXPECT_EQ(probe(true), 0.0);
}

TEST(Recalibration, IdempotentAndLeavesWeightsAlone) {
  const auto data = small_data(8, 14);
  SuperNet net(toy_space(), 5, false, 14);
  train_spatial(net, data, range(0, 8), quick(3, 1));
  Rng rng(14);
  const SpatialGenome g = sample_random(toy_space(), rng);
  std::vector<Tensor> batches{pose::image_batch(data, {0, 1, 2, 3}, 0), pose::image_batch(data, {4, 5, 6, 7}, 1)};
  std::vector<std::vector<float>> weights;
  for (auto* p : net.parameters()) weights.push_back(p->value().vec());
  const auto before = net.norms().front()->stats().mean;
  recalibrate_statistics(net, g, batches);
  std::vector<std::vector<float>> first;
  for (auto* bn : net.norms()) first.push_back(bn->stats().mean);
  recalibrate_statistics(net, g, batches);
  std::size_t i = 0;
  for (auto* bn : net.norms()) EXPECT_EQ(bn->stats().mean, first[i++]);
  i = 0;
  for (auto* p : net.parameters()) EXPECT_EQ(p->value().vec(), weights[i++]);
  EXPECT_NE(net.norms().front()->stats().mean, before);
  EXPECT_THROW(recalibrate_statistics(net, g, {}), DataError);
}

TEST(Recalibration, ImprovesSampledSubnetworksInMostSeeds) {
  pose::DataConfig dc;
  dc.sequences = 96;
  dc.seed = 15;
  const auto data = pose::generate(dc);
  SuperNet net(toy_space(), 5, false, 15);
  TrainConfig c = quick(200, 2, 15);
  c.batch_size = 16;
  train_spatial(net, data, range(0, 64), c);
  EvalData with{&data, range(0, 32), range(64, 96), 32};
  EvalData without = with;
  without.recalibrate = false;
  std::vector<ag::NormStats> trained;
  for (auto* bn : net.norms()) trained.push_back(bn->stats());
  int wins = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    const SpatialGenome g = sample_random(toy_space(), rng);
    std::size_t i = 0;
    for (auto* bn : net.norms()) bn->stats() = trained[i++];
    const double plain = evaluate_spatial(net, g, without);
    const double recal = evaluate_spatial(net, g, with);
    wins += recal >= plain;
  }
  EXPECT_GT(wins, seeds / 2);
}
