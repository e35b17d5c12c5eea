#include "vipnas/genome.hpp"

#include <algorithm>
#include <sstream>

#include "vipnas/errors.hpp"

namespace vipnas {

using nlohmann::json;

std::vector<int> step_grid(IntRange range, int step) {
  if (range.min > range.max || step <= 0) {
    throw ConfigError("invalid range [" + std::to_string(range.min) + "," +
                      std::to_string(range.max) + "] step " + std::to_string(step));
  }
  std::vector<int> v;
  for (int x = range.min; x < range.max; x += step) v.push_back(x);
  v.push_back(range.max);
  return v;
}

std::vector<int> StageRange::depth_grid() const { return step_grid(depth, steps.depth); }
std::vector<int> StageRange::width_grid() const { return step_grid(width, steps.width); }
std::vector<int> StageRange::group_grid() const { return step_grid(group, steps.group); }

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::None: return "none";
    case AttentionKind::SE: return "se";
    case AttentionKind::GC: return "gc";
  }
  return "none";
}

std::string to_string(FusionOp op) {
  switch (op) {
    case FusionOp::Add: return "add";
    case FusionOp::Mul: return "mul";
    case FusionOp::Cat: return "cat";
  }
  return "add";
}

FusionOp parse_fusion_op(const std::string& s) {
  if (s == "add") return FusionOp::Add;
  if (s == "mul") return FusionOp::Mul;
  if (s == "cat") return FusionOp::Cat;
  throw ConfigError("unknown fusion op '" + s + "' (expected add|mul|cat)");
}

namespace {

AttentionKind parse_attention(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "se") return AttentionKind::SE;
  if (s == "gc") return AttentionKind::GC;
  throw ConfigError("unknown attention kind '" + s + "'");
}

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::string list_str(const std::vector<int>& v) {
  std::ostringstream os;
  os << "{";
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << "}";
  return os.str();
}

void check_range(const StageRange& r, const std::string& where, bool deconv) {
  if (r.depth.min < 1) throw ConfigError(where + ": minimum depth must be >= 1");
  if (r.depth.min > r.depth.max || r.width.min > r.width.max || r.group.min > r.group.max ||
      r.width.min < 1 || r.group.min < 1) {
    throw ConfigError(where + ": empty or non-positive range");
  }
  if (r.kernel_choices.empty()) throw ConfigError(where + ": no kernel choices");
  if (r.steps.depth <= 0 || r.steps.width <= 0 || r.steps.group <= 0 || r.steps.kernel <= 0) {
    throw ConfigError(where + ": search steps must be positive");
  }
  const int parity = r.kernel_choices.front() % 2;
  for (int k : r.kernel_choices) {
    if (k < 1 || k % 2 != parity) {
      throw ConfigError(where + ": kernel choices must share parity");
    }
    if (deconv ? k % 2 != 0 : k % 2 != 1) {
      throw ConfigError(where + (deconv ? ": deconv kernels must be even"
                                        : ": conv kernels must be odd"));
    }
  }
  if (r.stride < 1) throw ConfigError(where + ": stride must be >= 1");
}

StageRange stage(IntRange depth, IntRange width, std::vector<int> kernels, IntRange group,
                 bool attention, SearchSteps steps, int stride) {
  StageRange r;
  r.depth = depth;
  r.width = width;
  r.kernel_choices = std::move(kernels);
  r.group = group;
  r.attention_allowed = attention;
  r.steps = steps;
  r.stride = stride;
  return r;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  if (v.empty()) throw ConfigError("empty choice set");
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

}  // namespace

void SearchSpace::check() const {
  if (stages.empty()) throw ConfigError(name + ": no stages");
  if (head.empty()) throw ConfigError(name + ": no head layers");
  check_range(stem, name + ".stem", false);
  int down = 1, up = 1;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    check_range(stages[i], name + ".stages[" + std::to_string(i) + "]", false);
    down *= stages[i].stride;
  }
  for (std::size_t i = 0; i < head.size(); ++i) {
    check_range(head[i], name + ".head[" + std::to_string(i) + "]", true);
    up *= head[i].stride;
  }
  if (down != up) {
    throw ConfigError(name + ": head upsampling must undo stage downsampling so "
                             "heatmaps come out at stride 4");
  }
  if (expansion < 1 || attention_reduction < 1) {
    throw ConfigError(name + ": expansion and attention reduction must be >= 1");
  }
}

SearchSpace resnet50_space() {
  const SearchSteps steps{1, 16, 2, 16};
  SearchSpace s;
  s.name = "resnet50";
  s.stem = stage({1, 1}, {32, 64}, {7}, {1, 1}, false, steps, 2);
  s.stages = {
      stage({3, 4}, {64, 80}, {3, 5}, {16, 64}, true, steps, 2),
      stage({4, 6}, {128, 160}, {3, 5}, {16, 64}, true, steps, 1),
      stage({6, 8}, {256, 320}, {3, 5}, {16, 64}, true, steps, 2),
      stage({3, 4}, {512, 640}, {3, 5}, {16, 64}, true, steps, 2),
  };
  for (int i = 0; i < 3; ++i) s.head.push_back(stage({1, 1}, {64, 256}, {4}, {16, 64}, false, steps, 2));
  s.expansion = 1;
  s.attention = AttentionKind::GC;
  s.attention_reduction = 16;
  return s;
}

SearchSpace toy_space() {
  const SearchSteps steps{1, 8, 2, 1};
  SearchSpace s;
  s.name = "toy";
  s.stem = stage({1, 1}, {8, 16}, {5}, {1, 1}, false, steps, 2);
  s.stages = {
      stage({1, 2}, {8, 16}, {3, 5}, {1, 4}, true, steps, 1),
      stage({1, 2}, {16, 24}, {3, 5}, {1, 4}, true, steps, 2),
      stage({1, 2}, {16, 32}, {3, 5}, {1, 4}, true, steps, 1),
      stage({1, 2}, {24, 32}, {3, 5}, {1, 4}, true, steps, 1),
  };
  s.head = {
      stage({1, 1}, {8, 24}, {2, 4}, {1, 2}, false, steps, 2),
      stage({1, 1}, {8, 24}, {2, 4}, {1, 2}, false, steps, 1),
      stage({1, 1}, {8, 24}, {2, 4}, {1, 2}, false, steps, 1),
  };
  s.expansion = 1;
  s.attention = AttentionKind::GC;
  s.attention_reduction = 4;
  return s;
}

SearchSpace sbl_resnet50_space() {
  const SearchSteps steps{1, 16, 2, 16};
  SearchSpace s;
  s.name = "sbl_resnet50";
  s.stem = stage({1, 1}, {64, 64}, {7}, {1, 1}, false, steps, 2);
  s.stages = {
      stage({3, 3}, {64, 64}, {3}, {1, 1}, false, steps, 2),
      stage({4, 4}, {128, 128}, {3}, {1, 1}, false, steps, 1),
      stage({6, 6}, {256, 256}, {3}, {1, 1}, false, steps, 2),
      stage({3, 3}, {512, 512}, {3}, {1, 1}, false, steps, 2),
  };
  for (int i = 0; i < 3; ++i) s.head.push_back(stage({1, 1}, {256, 256}, {4}, {1, 1}, false, steps, 2));
  s.expansion = 4;
  s.attention = AttentionKind::None;
  return s;
}

SearchSpace space_by_name(const std::string& name) {
  if (name == "resnet50") return resnet50_space();
  if (name == "toy") return toy_space();
  if (name == "sbl_resnet50") return sbl_resnet50_space();
  throw ConfigError("unknown search space '" + name + "' (expected toy|resnet50|sbl_resnet50)");
}

SpatialGenome sbl_resnet50_genome() { return corner(sbl_resnet50_space(), Corner::Biggest); }

int stage_output_channels(const SearchSpace& space, const SpatialGenome& g, int stage) {
  return g.stages.at(stage).width * space.expansion;
}

int head_input_channels(const SearchSpace& space, const SpatialGenome& g, int layer) {
  if (layer == 0) {
    return stage_output_channels(space, g, static_cast<int>(g.stages.size()) - 1);
  }
  return g.head.at(layer - 1).width;
}

std::string ValidationResult::describe() const {
  std::ostringstream os;
  for (const auto& v : violations) {
    os << v.field << "=" << v.value << " not in " << v.allowed << "; ";
  }
  return os.str();
}

ValidationResult validate(const SpatialGenome& g, const SearchSpace& space) {
  ValidationResult r;
  auto bad = [&r](std::string field, int value, std::string allowed) {
    r.violations.push_back({std::move(field), value, std::move(allowed)});
  };
  if (!contains(space.stem.width_grid(), g.stem_width)) {
    bad("stem.width", g.stem_width, list_str(space.stem.width_grid()));
  }
  if (g.stages.size() != space.stages.size()) {
    bad("stages.size", static_cast<int>(g.stages.size()), std::to_string(space.stages.size()));
    return r;
  }
  if (g.head.size() != space.head.size()) {
    bad("head.size", static_cast<int>(g.head.size()), std::to_string(space.head.size()));
    return r;
  }
  for (std::size_t i = 0; i < g.stages.size(); ++i) {
    const auto& sg = g.stages[i];
    const auto& sr = space.stages[i];
    const std::string p = "stages[" + std::to_string(i) + "].";
    if (!contains(sr.depth_grid(), sg.depth)) bad(p + "depth", sg.depth, list_str(sr.depth_grid()));
    if (!contains(sr.width_grid(), sg.width)) bad(p + "width", sg.width, list_str(sr.width_grid()));
    if (!contains(sr.kernel_choices, sg.kernel)) bad(p + "kernel", sg.kernel, list_str(sr.kernel_choices));
    if (!contains(sr.group_grid(), sg.group)) {
      bad(p + "group", sg.group, list_str(sr.group_grid()));
    } else if (sg.width % sg.group != 0) {
      bad(p + "group", sg.group, "divisors of width " + std::to_string(sg.width));
    }
    if (sg.attention && !sr.attention_allowed) bad(p + "attention", 1, "{0}");
  }
  for (std::size_t i = 0; i < g.head.size(); ++i) {
    const auto& hg = g.head[i];
    const auto& hr = space.head[i];
    const std::string p = "head[" + std::to_string(i) + "].";
    if (!contains(hr.width_grid(), hg.width)) bad(p + "width", hg.width, list_str(hr.width_grid()));
    if (!contains(hr.kernel_choices, hg.kernel)) bad(p + "kernel", hg.kernel, list_str(hr.kernel_choices));
    const int in = head_input_channels(space, g, static_cast<int>(i));
    if (!contains(hr.group_grid(), hg.group)) {
      bad(p + "group", hg.group, list_str(hr.group_grid()));
    } else if (hg.width % hg.group != 0 || in % hg.group != 0) {
      bad(p + "group", hg.group,
          "common divisors of " + std::to_string(in) + " and " + std::to_string(hg.width));
    }
  }
  return r;
}

ValidationResult validate(const TemporalGenome& g, const SearchSpace& space) {
  ValidationResult r = validate(g.spatial, space);
  if (g.fusion_stage < 1 || g.fusion_stage > space.fusion_stage_count()) {
    r.violations.push_back({"fusion.stage", g.fusion_stage,
                            "[1," + std::to_string(space.fusion_stage_count()) + "]"});
  }
  const int op = static_cast<int>(g.fusion_op);
  if (op < 0 || op >= kFusionOpCount) r.violations.push_back({"fusion.op", op, "{add,mul,cat}"});
  return r;
}

ValidationResult validate(const VideoGenome& g, const SearchSpace& space) {
  ValidationResult r = validate(g.key, space);
  for (auto& v : r.violations) v.field = "key." + v.field;
  if (g.frames.empty()) r.violations.push_back({"frames.size", 0, "[1,inf)"});
  for (std::size_t t = 0; t < g.frames.size(); ++t) {
    for (auto v : validate(g.frames[t], space).violations) {
      v.field = "frames[" + std::to_string(t) + "]." + v.field;
      r.violations.push_back(std::move(v));
    }
  }
  return r;
}

int round_group(const StageRange& range, int requested, std::initializer_list<int> channels) {
  const auto grid = range.group_grid();
  auto divides = [&channels](int g) {
    return std::all_of(channels.begin(), channels.end(), [g](int c) { return c % g == 0; });
  };
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    if (*it <= requested && divides(*it)) return *it;
  }
  for (int g : grid) {
    if (g > requested && divides(g)) return g;
  }
  throw ConfigError("no group value in " + list_str(grid) + " divides the channel counts");
}

SpatialGenome sample_random(const SearchSpace& space, Rng& rng) {
  SpatialGenome g;
  g.stem_width = pick(space.stem.width_grid(), rng);
  for (const auto& sr : space.stages) {
    StageGene s;
    s.depth = pick(sr.depth_grid(), rng);
    s.width = pick(sr.width_grid(), rng);
    s.kernel = pick(sr.kernel_choices, rng);
    s.group = round_group(sr, pick(sr.group_grid(), rng), {s.width});
    s.attention = sr.attention_allowed ? std::bernoulli_distribution(0.5)(rng) : false;
    g.stages.push_back(s);
  }
  for (std::size_t i = 0; i < space.head.size(); ++i) {
    const auto& hr = space.head[i];
    HeadGene h;
    h.width = pick(hr.width_grid(), rng);
    h.kernel = pick(hr.kernel_choices, rng);
    const int in = head_input_channels(space, g, static_cast<int>(i));
    h.group = round_group(hr, pick(hr.group_grid(), rng), {in, h.width});
    g.head.push_back(h);
  }
  return g;
}

SpatialGenome sample_random(const SearchSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  return sample_random(space, rng);
}

TemporalGenome with_random_fusion(const SearchSpace& space, SpatialGenome spatial, Rng& rng) {
  TemporalGenome t;
  t.spatial = std::move(spatial);
  t.fusion_op = static_cast<FusionOp>(std::uniform_int_distribution<int>(0, kFusionOpCount - 1)(rng));
  t.fusion_stage = std::uniform_int_distribution<int>(1, space.fusion_stage_count())(rng);
  return t;
}

TemporalGenome sample_temporal(const SearchSpace& space, Rng& rng) {
  SpatialGenome s = sample_random(space, rng);
  return with_random_fusion(space, std::move(s), rng);
}

TemporalGenome sample_temporal(const SearchSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  return sample_temporal(space, rng);
}

SpatialGenome corner(const SearchSpace& space, Corner which) {
  const bool big = which == Corner::Biggest;
  SpatialGenome g;
  g.stem_width = big ? space.stem.width.max : space.stem.width.min;
  for (const auto& sr : space.stages) {
    StageGene s;
    s.depth = big ? sr.depth.max : sr.depth.min;
    s.width = big ? sr.width.max : sr.width.min;
    s.kernel = big ? *std::max_element(sr.kernel_choices.begin(), sr.kernel_choices.end())
                   : *std::min_element(sr.kernel_choices.begin(), sr.kernel_choices.end());
    s.group = round_group(sr, big ? sr.group.min : sr.group.max, {s.width});
    s.attention = big && sr.attention_allowed;
    g.stages.push_back(s);
  }
  for (std::size_t i = 0; i < space.head.size(); ++i) {
    const auto& hr = space.head[i];
    HeadGene h;
    h.width = big ? hr.width.max : hr.width.min;
    h.kernel = big ? *std::max_element(hr.kernel_choices.begin(), hr.kernel_choices.end())
                   : *std::min_element(hr.kernel_choices.begin(), hr.kernel_choices.end());
    const int in = head_input_channels(space, g, static_cast<int>(i));
    h.group = round_group(hr, big ? hr.group.min : hr.group.max, {in, h.width});
    g.head.push_back(h);
  }
  return g;
}

std::uint64_t temporal_space_size(int fusion_ops, int fusion_stages, int frames) {
  std::uint64_t size = 1;
  for (int t = 0; t < frames; ++t) size *= static_cast<std::uint64_t>(fusion_ops) * fusion_stages;
  return size;
}

json to_json(const SpatialGenome& g) {
  json stages = json::array();
  for (const auto& s : g.stages) {
    stages.push_back({{"depth", s.depth}, {"width", s.width}, {"kernel", s.kernel},
                      {"group", s.group}, {"attention", s.attention}});
  }
  json head = json::array();
  for (const auto& h : g.head) {
    head.push_back({{"width", h.width}, {"kernel", h.kernel}, {"group", h.group}});
  }
  return {{"stem", {{"width", g.stem_width}}}, {"stages", stages}, {"head", head}, {"fusion", nullptr}};
}

json to_json(const TemporalGenome& g) {
  json j = to_json(g.spatial);
  j["fusion"] = {{"op", to_string(g.fusion_op)}, {"stage", g.fusion_stage}};
  return j;
}

json to_json(const VideoGenome& g) {
  json frames = json::array();
  for (const auto& f : g.frames) frames.push_back(to_json(f));
  return {{"key", to_json(g.key)}, {"frames", frames}};
}

SpatialGenome spatial_from_json(const json& j) {
  try {
    SpatialGenome g;
    g.stem_width = j.at("stem").at("width").get<int>();
    for (const auto& s : j.at("stages")) {
      g.stages.push_back({s.at("depth").get<int>(), s.at("width").get<int>(),
                          s.at("kernel").get<int>(), s.at("group").get<int>(),
                          s.at("attention").get<bool>()});
    }
    for (const auto& h : j.at("head")) {
      g.head.push_back({h.at("width").get<int>(), h.at("kernel").get<int>(), h.at("group").get<int>()});
    }
    return g;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed genome JSON: ") + e.what());
  }
}

TemporalGenome temporal_from_json(const json& j) {
  TemporalGenome t;
  t.spatial = spatial_from_json(j);
  if (!j.contains("fusion") || j.at("fusion").is_null()) {
    throw ConfigError("temporal genome JSON requires a non-null \"fusion\" object");
  }
  try {
    t.fusion_op = parse_fusion_op(j.at("fusion").at("op").get<std::string>());
    t.fusion_stage = j.at("fusion").at("stage").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed fusion JSON: ") + e.what());
  }
  return t;
}

VideoGenome video_from_json(const json& j) {
  VideoGenome v;
  try {
    v.key = spatial_from_json(j.at("key"));
    for (const auto& f : j.at("frames")) v.frames.push_back(temporal_from_json(f));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed video genome JSON: ") + e.what());
  }
  return v;
}

namespace {

json range_json(const StageRange& r) {
  return {{"depth", {r.depth.min, r.depth.max}},
          {"width", {r.width.min, r.width.max}},
          {"kernel", r.kernel_choices},
          {"group", {r.group.min, r.group.max}},
          {"attention", r.attention_allowed},
          {"steps", {{"depth", r.steps.depth}, {"width", r.steps.width},
                     {"kernel", r.steps.kernel}, {"group", r.steps.group}}},
          {"stride", r.stride}};
}

StageRange range_from_json(const json& j) {
  StageRange r;
  r.depth = {j.at("depth").at(0).get<int>(), j.at("depth").at(1).get<int>()};
  r.width = {j.at("width").at(0).get<int>(), j.at("width").at(1).get<int>()};
  r.kernel_choices = j.at("kernel").get<std::vector<int>>();
  r.group = {j.at("group").at(0).get<int>(), j.at("group").at(1).get<int>()};
  r.attention_allowed = j.at("attention").get<bool>();
  const auto& st = j.at("steps");
  r.steps = {st.at("depth").get<int>(), st.at("width").get<int>(), st.at("kernel").get<int>(),
             st.at("group").get<int>()};
  r.stride = j.at("stride").get<int>();
  return r;
}

}  // namespace

json to_json(const SearchSpace& s) {
  json stages = json::array(), head = json::array();
  for (const auto& r : s.stages) stages.push_back(range_json(r));
  for (const auto& r : s.head) head.push_back(range_json(r));
  return {{"name", s.name},
          {"stem", range_json(s.stem)},
          {"stages", stages},
          {"head", head},
          {"expansion", s.expansion},
          {"attention", to_string(s.attention)},
          {"attention_reduction", s.attention_reduction}};
}

SearchSpace space_from_json(const json& j) {
  try {
    SearchSpace s;
    s.name = j.at("name").get<std::string>();
    s.stem = range_from_json(j.at("stem"));
    for (const auto& r : j.at("stages")) s.stages.push_back(range_from_json(r));
    for (const auto& r : j.at("head")) s.head.push_back(range_from_json(r));
    s.expansion = j.at("expansion").get<int>();
    s.attention = parse_attention(j.at("attention").get<std::string>());
    s.attention_reduction = j.at("attention_reduction").get<int>();
    s.check();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed search space JSON: ") + e.what());
  }
}

std::string genome_key(const SpatialGenome& g) { return to_json(g).dump(); }
std::string genome_key(const TemporalGenome& g) { return to_json(g).dump(); }
std::string genome_key(const VideoGenome& g) { return to_json(g).dump(); }

}  // namespace vipnas
