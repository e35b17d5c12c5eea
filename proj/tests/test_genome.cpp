#include <gtest/gtest.h>

#include <map>
#include <set>

#include "vipnas/errors.hpp"
#include "vipnas/genome.hpp"

using namespace vipnas;

namespace {

SpatialGenome stage1_case() {
  SpatialGenome g = corner(resnet50_space(), Corner::Smallest);
  g.stages[0] = StageGene{3, 64, 3, 16, false};
  return g;
}

bool names_field(const ValidationResult& r, const std::string& needle) {
  for (const auto& v : r.violations)
    if (v.field.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(Validate, Stage1TableRangeIsOk) {
  EXPECT_TRUE(validate(stage1_case(), resnet50_space()).ok());
}

TEST(Validate, OffGridWidthIsRejected) {
  SpatialGenome g = stage1_case();
  g.stages[0].width = 72;
  auto r = validate(g, resnet50_space());
  ASSERT_FALSE(r.ok());
  EXPECT_TRUE(names_field(r, "width"));
}

TEST(Validate, ZeroDepthIsRejected) {
  SpatialGenome g = stage1_case();
  g.stages[0].depth = 0;
  auto r = validate(g, resnet50_space());
  ASSERT_FALSE(r.ok());
  EXPECT_TRUE(names_field(r, "depth"));
}

TEST(Validate, GroupMustDivideChannels) {
  SpatialGenome g = corner(toy_space(), Corner::Smallest);
  g.stages[0].width = 8;
  g.stages[0].group = 3;
  EXPECT_FALSE(validate(g, toy_space()).ok());
}

TEST(Validate, TemporalFusionStageBounds) {
  TemporalGenome t{corner(resnet50_space(), Corner::Smallest), FusionOp::Cat, 5};
  EXPECT_FALSE(validate(t, resnet50_space()).ok());
  t.fusion_stage = 4;
  EXPECT_TRUE(validate(t, resnet50_space()).ok());
}

TEST(Validate, VideoGenomeNeedsFrames) {
  VideoGenome v{corner(toy_space(), Corner::Smallest), {}};
  EXPECT_FALSE(validate(v, toy_space()).ok());
}

TEST(StepGrid, AnchorsAtMinimumAndKeepsMaximum) {
  EXPECT_EQ(step_grid({64, 80}, 16), (std::vector<int>{64, 80}));
  EXPECT_EQ(step_grid({16, 64}, 16), (std::vector<int>{16, 32, 48, 64}));
  EXPECT_EQ(step_grid({64, 100}, 16), (std::vector<int>{64, 80, 96, 100}));
  EXPECT_EQ(step_grid({5, 5}, 16), (std::vector<int>{5}));
}

TEST(SampleRandom, DeterministicUnderSeed) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    EXPECT_EQ(sample_random(resnet50_space(), seed), sample_random(resnet50_space(), seed));
  }
  EXPECT_TRUE(validate(sample_random(resnet50_space(), 0), resnet50_space()).ok());
}

TEST(SampleRandom, CoversDepthChoicesAndStaysValid) {
  const SearchSpace space = resnet50_space();
  Rng rng(7);
  std::map<int, int> depth;
  std::set<int> groups;
  for (int i = 0; i < 1000; ++i) {
    SpatialGenome g = sample_random(space, rng);
    ASSERT_TRUE(validate(g, space).ok()) << validate(g, space).describe();
    depth[g.stages[0].depth]++;
    groups.insert(g.stages[2].group);
  }
  ASSERT_EQ(depth.size(), 2u);
  // Uniform over two values: chi-square with 1 dof below 10.83 (p = 0.001).
  const double e = 500.0;
  const double chi = std::pow(depth[3] - e, 2) / e + std::pow(depth[4] - e, 2) / e;
  EXPECT_LT(chi, 10.83);
  EXPECT_EQ(groups, (std::set<int>{16, 32, 48, 64}));
}

TEST(SampleRandom, SingletonSpaceIsForced) {
  const SearchSpace space = sbl_resnet50_space();
  EXPECT_EQ(sample_random(space, 3), sbl_resnet50_genome());
  EXPECT_EQ(corner(space, Corner::Smallest), corner(space, Corner::Biggest));
}

TEST(Corner, ResNet50Biggest) {
  SpatialGenome g = corner(resnet50_space(), Corner::Biggest);
  const int depths[4] = {4, 6, 8, 4}, widths[4] = {80, 160, 320, 640};
  for (int s = 0; s < 4; ++s) {
    EXPECT_EQ(g.stages[s].depth, depths[s]);
    EXPECT_EQ(g.stages[s].width, widths[s]);
    EXPECT_EQ(g.stages[s].kernel, 5);
    EXPECT_EQ(g.stages[s].group, 16);
    EXPECT_TRUE(g.stages[s].attention);
  }
  EXPECT_TRUE(validate(g, resnet50_space()).ok());
}

TEST(Corner, ResNet50Smallest) {
  SpatialGenome g = corner(resnet50_space(), Corner::Smallest);
  const int depths[4] = {3, 4, 6, 3}, widths[4] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    EXPECT_EQ(g.stages[s].depth, depths[s]);
    EXPECT_EQ(g.stages[s].width, widths[s]);
    EXPECT_EQ(g.stages[s].kernel, 3);
    EXPECT_EQ(g.stages[s].group, 64);
    EXPECT_FALSE(g.stages[s].attention);
  }
  EXPECT_TRUE(validate(g, resnet50_space()).ok());
}

TEST(Corner, CornersValidateInEveryPreset) {
  for (const auto& space : {resnet50_space(), toy_space(), sbl_resnet50_space()}) {
    EXPECT_TRUE(validate(corner(space, Corner::Smallest), space).ok()) << space.name;
    EXPECT_TRUE(validate(corner(space, Corner::Biggest), space).ok()) << space.name;
  }
}

TEST(SampleTemporal, SpaceSizeAndCoverage) {
  EXPECT_EQ(temporal_space_size(3, 4, 3), 1728u);
  EXPECT_EQ(sample_temporal(toy_space(), 5), sample_temporal(toy_space(), 5));
  Rng rng(1);
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < 1000; ++i) {
    TemporalGenome t = sample_temporal(resnet50_space(), rng);
    ASSERT_TRUE(validate(t, resnet50_space()).ok());
    seen.insert({static_cast<int>(t.fusion_op), t.fusion_stage});
  }
  EXPECT_EQ(seen.size(), 12u);
}

TEST(Json, RoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    TemporalGenome t = sample_temporal(toy_space(), rng);
    EXPECT_EQ(temporal_from_json(to_json(t)), t);
    EXPECT_EQ(spatial_from_json(to_json(t.spatial)), t.spatial);
    VideoGenome v{t.spatial, {t, sample_temporal(toy_space(), rng)}};
    EXPECT_EQ(video_from_json(nlohmann::json::parse(to_json(v).dump())), v);
  }
  for (const auto& space : {resnet50_space(), toy_space(), sbl_resnet50_space()})
    EXPECT_EQ(space_from_json(to_json(space)), space);
}

TEST(Json, SchemaFields) {
  TemporalGenome t{corner(toy_space(), Corner::Smallest), FusionOp::Mul, 2};
  auto j = to_json(t);
  EXPECT_EQ(j["fusion"]["op"], "mul");
  EXPECT_EQ(j["fusion"]["stage"], 2);
  EXPECT_EQ(j["stages"].size(), 4u);
  EXPECT_EQ(j["head"].size(), 3u);
  EXPECT_TRUE(to_json(t.spatial)["fusion"].is_null());
  EXPECT_THROW(spatial_from_json(nlohmann::json::parse(R"({"stages":[]})")), ConfigError);
}

TEST(RoundGroup, PicksLargestDividingGridValue) {
  StageRange r;
  r.group = {16, 64};
  r.steps.group = 16;
  EXPECT_EQ(round_group(r, 64, {80}), 16);
  EXPECT_EQ(round_group(r, 64, {96}), 48);
  EXPECT_EQ(round_group(r, 16, {64, 128}), 16);
}
