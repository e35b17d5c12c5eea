#include <gtest/gtest.h>

#include "locality_oracle.hpp"
#include "net_util.hpp"
#include "net_util.hpp"
#include "test_util.hpp"
#include "vipnas/elastic_ops.hpp"
#include "vipnas/errors.hpp"

using namespace vipnas;
using vipnas::testing::random_tensor;

TEST(SliceKernel, CentreWindow) {
  Tensor w(2, 2, 7, 7);
  EXPECT_EQ(slice_kernel(w, 3).offset, 2);
  EXPECT_EQ(slice_kernel(w, 3).kernel, 3);
  EXPECT_EQ(slice_kernel(w, 7).offset, 0);
  Tensor d(2, 2, 4, 4);
  EXPECT_EQ(slice_kernel(d, 2).offset, 1);
  EXPECT_THROW(slice_kernel(w, 4), ConfigError);
  EXPECT_THROW(slice_kernel(w, 9), ConfigError);
}

TEST(SliceKernel, SmallerKernelsNestInLarger) {
  std::mt19937_64 rng(1);
  Tensor w = random_tensor({2, 3, 7, 7}, rng);
  Tensor k3 = slice_kernel(w, 3).materialize(), k5 = slice_kernel(w, 5).materialize();
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) EXPECT_EQ(k3.at(o, i, y, x), k5.at(o, i, y + 1, x + 1));
}

TEST(SliceWidth, Examples) {
  Tensor w(16, 8, 3, 3);
  WeightView full = slice_kernel(w, 3);
  WeightView v = slice_width(full, 8, 8);
  EXPECT_EQ(v.out, 8);
  EXPECT_EQ(v.in, 8);
  WeightView all = slice_width(full, 16, 8);
  EXPECT_EQ(all.materialize().vec(), w.vec());
  WeightView one = slice_width(full, 1, 1);
  EXPECT_EQ(one.materialize().shape(), (Shape{1, 1, 3, 3}));
  EXPECT_THROW(slice_width(full, 17, 8), ConfigError);
  EXPECT_THROW(slice_width(full, 4, 9), ConfigError);
}

TEST(SliceWidth, BiasIsSlicedToFirstW) {
  Rng rng(1);
  ElasticConv c("c", 4, 2, 1, 1, false, true, rng);
  for (int i = 0; i < 4; ++i) c.bias()->value().data()[i] = float(i + 1);
  Tensor x(1, 2, 1, 1, 0.0f);
  Tensor y = c.forward(ag::constant(x), {1, 2, 1, 1})->value;
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.data()[0], 1.0f);
}

TEST(GroupedForward, DenseWhenSingleGroup) {
  std::mt19937_64 rng(2);
  Tensor w = random_tensor({6, 6, 3, 3}, rng);
  Tensor x = random_tensor({1, 4, 5, 5}, rng);
  Tensor y = grouped_forward(ag::constant(x), ag::constant(w), nullptr, {4, 4, 3, 1}, 1, 1)->value;
  for (int o = 0; o < 4; ++o)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 5; ++xx) {
        double acc = 0;
        for (int i = 0; i < 4; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = yy + ky - 1, ix = xx + kx - 1;
              if (iy >= 0 && ix >= 0 && iy < 5 && ix < 5) acc += x.at(0, i, iy, ix) * w.at(o, i, ky, kx);
            }
        EXPECT_NEAR(y.at(0, o, yy, xx), acc, 1e-6);
      }
}

TEST(GroupedForward, TwoGroupsChannelIndexMap) {
  Tensor x(1, 4, 2, 2);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 4; ++i) x.plane(0, c)[i] = float(c);
  Tensor w(4, 4, 1, 1, 1.0f);
  Tensor y = grouped_forward(ag::constant(x), ag::constant(w), nullptr, {4, 4, 1, 2}, 1, 0)->value;
  // Loop-nest oracle: output o in group g sums inputs g*2 .. g*2+1.
  for (int o = 0; o < 4; ++o) {
    const int g = o / 2;
    float want = 0;
    for (int i = 0; i < 2; ++i) want += float(g * 2 + i);
    for (int p = 0; p < 4; ++p) EXPECT_EQ(y.plane(0, o)[p], want);
  }
  EXPECT_EQ(y.at(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(y.at(0, 3, 0, 0), 5.0f);
}

TEST(GroupedForward, DepthwiseOracle) {
  std::mt19937_64 rng(3);
  Tensor w = random_tensor({8, 8, 5, 5}, rng);
  Tensor x = random_tensor({2, 6, 4, 5}, rng);
  Tensor y = grouped_forward(ag::constant(x), ag::constant(w), nullptr, {6, 6, 3, 6}, 1, 1)->value;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 6; ++c)
      for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 5; ++xx) {
          double acc = 0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = yy + ky - 1, ix = xx + kx - 1;
              if (iy >= 0 && ix >= 0 && iy < 4 && ix < 5) acc += x.at(n, c, iy, ix) * w.at(c, 0, ky + 1, kx + 1);
            }
          EXPECT_NEAR(y.at(n, c, yy, xx), acc, 1e-5);
        }
}

TEST(GroupedForward, IndivisibleGroupIsConfigError) {
  Tensor w(4, 4, 1, 1);
  Tensor x(1, 4, 2, 2);
  EXPECT_THROW(grouped_forward(ag::constant(x), ag::constant(w), nullptr, {4, 4, 1, 3}, 1, 0), ConfigError);
}

TEST(Attention, DisabledIsIdentity) {
  Rng rng(4);
  AttentionModule m("a", AttentionKind::GC, 8, 4, rng);
  std::mt19937_64 trng(4);
  ag::Var x = ag::constant(random_tensor({2, 8, 3, 3}, trng));
  EXPECT_EQ(elastic_attention_forward(x, false, m).get(), x.get());
}

TEST(Attention, SaturatedSeGateIsIdentity) {
  Rng rng(5);
  AttentionModule m("a", AttentionKind::SE, 8, 4, rng);
  m.fc2().weight().value().fill(0.0f);
  m.fc2().bias()->value().fill(40.0f);
  std::mt19937_64 trng(5);
  ag::Var x = ag::constant(random_tensor({2, 6, 3, 4}, trng));
  Tensor y = elastic_attention_forward(x, true, m)->value;
  EXPECT_EQ(max_abs_diff(y, x->value), 0.0f);
}

TEST(Attention, PreservesShape) {
  std::mt19937_64 trng(6);
  for (AttentionKind k : {AttentionKind::SE, AttentionKind::GC}) {
    Rng rng(6);
    AttentionModule m("a", k, 32, 4, rng);
    for (Shape s : {Shape{1, 32, 4, 4}, Shape{2, 5, 1, 7}, Shape{3, 17, 6, 2}}) {
      ag::Var x = ag::constant(random_tensor(s, trng));
      EXPECT_EQ(elastic_attention_forward(x, true, m)->value.shape(), s);
    }
  }
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  std::mt19937_64 trng(7);
  for (AttentionKind k : {AttentionKind::SE, AttentionKind::GC}) {
    Rng rng(7);
    AttentionModule m("a", k, 8, 2, rng);
    for (auto& v : m.fc2().weight().value().vec()) v = 0.3f;
    auto f = [&](const std::vector<ag::Var>& in) { return m.forward(in[0]); };
    vipnas::testing::expect_gradients_match(f, {random_tensor({2, 6, 3, 3}, trng)}, trng);
  }
}

TEST(GradientLocality, SampledSubnetworksTouchOnlyTheirSlices) {
  SuperNet net(toy_space(), 5, true, 8);
  std::mt19937_64 trng(8);
  vipnas::testing::randomise_state(net, trng);
  Rng grng(8);
  for (int trial = 0; trial < 6; ++trial) {
    TemporalGenome t = sample_temporal(toy_space(), grng);
    const bool temporal = trial % 2 == 1;
    auto params = net.parameters();
    ag::zero_grad(params);
    for (auto* p : params) p->var->grad = Tensor();
    ag::Var x = ag::constant(random_tensor({2, 3, 64, 48}, trng));
    ag::Var out = temporal
                      ? net.forward_temporal(x, ag::constant(random_tensor({2, 5, 16, 12}, trng)), t,
                                             ag::NormMode::Train)
                      : net.forward_key(x, t.spatial, ag::NormMode::Train);
    ag::backward(ag::mse_loss(out, ag::constant(random_tensor(out->value.shape(), trng))));
    std::string leak;
    EXPECT_EQ(vipnas::testing::gradient_leaks(net, vipnas::testing::active_boxes(net, t, temporal), &leak), 0u)
        << genome_key(t) << " first leak in " << leak;
    int live = 0;
    for (auto* p : params)
      if (p->var->has_grad())
        for (float g : p->var->grad.vec()) live += g != 0.0f;
    EXPECT_GT(live, 1000);
  }
}
