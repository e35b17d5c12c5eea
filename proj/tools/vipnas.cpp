#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vipnas/checkpoint.hpp"
#include "vipnas/cost_model.hpp"
#include "vipnas/errors.hpp"
#include "vipnas/plot.hpp"
#include "vipnas/posekit.hpp"
#include "vipnas/searcher.hpp"
#include "vipnas/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vipnas;

namespace {

constexpr const char* kKeyPrefix = "key/";

// ---- configuration: defaults < config file < flags ----

struct Field {
  std::string key;
  json value;
  std::string help;
};

class Command {
 public:
  Command(CLI::App& app, std::string name, std::string about, std::vector<Field> fields)
      : name_(std::move(name)), fields_(std::move(fields)) {
    sub_ = app.add_subcommand(name_, about);
    sub_->add_option("--config", config_file_, "JSON file with field overrides");
    sub_->add_option("--name", run_name_, "Run directory name under $VIPNAS_RUN_ROOT");
    sub_->add_flag("--force", force_, "Replace an existing run directory of the same name");
    for (const auto& f : fields_) {
      std::string flag = "--" + f.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options_[f.key] = sub_->add_option(flag, raw_[f.key], f.help + " (default " + f.value.dump() + ")");
    }
  }

  bool chosen() const { return sub_->parsed(); }
  const std::string& name() const { return name_; }
  bool force() const { return force_; }
  const std::string& run_name() const { return run_name_; }

  json resolve() const {
    json cfg = json::object();
    for (const auto& f : fields_) cfg[f.key] = f.value;
    if (!config_file_.empty()) {
      std::ifstream in(config_file_);
      if (!in) throw ConfigError("cannot read config file " + config_file_);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError(config_file_ + ": " + e.what());
      }
      if (file.contains("config") && file.contains("command")) file = file["config"];  // a run snapshot
      if (!file.is_object()) throw ConfigError(config_file_ + ": expected a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (!cfg.contains(k)) throw ConfigError(config_file_ + ": field '" + k + "' is not used by " + name_);
        cfg[k] = coerce(k, v, cfg[k]);
      }
    }
    for (const auto& f : fields_) {
      if (options_.at(f.key)->count() == 0) continue;
      cfg[f.key] = parse_flag(f.key, raw_.at(f.key), f.value);
    }
    return cfg;
  }

 private:
  static json coerce(const std::string& k, const json& v, const json& like) {
    const bool ok = (like.is_boolean() && v.is_boolean()) || (like.is_string() && v.is_string()) ||
                    (like.is_number_integer() && v.is_number_integer()) ||
                    (like.is_number_float() && v.is_number());
    if (!ok) throw ConfigError("field '" + k + "' expects " + std::string(like.type_name()) + ", got " + v.dump());
    return like.is_number_float() ? json(v.get<double>()) : v;
  }

  static json parse_flag(const std::string& k, const std::string& s, const json& like) {
    try {
      if (like.is_string()) return s;
      if (like.is_boolean()) {
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw std::invalid_argument(s);
      }
      std::size_t used = 0;
      json v = like.is_number_integer() ? json(std::stoll(s, &used)) : json(std::stod(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("--" + k + ": expected " + std::string(like.type_name()) + ", got '" + s + "'");
    }
  }

  std::string name_;
  std::vector<Field> fields_;
  CLI::App* sub_ = nullptr;
  std::string config_file_, run_name_;
  bool force_ = false;
  std::map<std::string, std::string> raw_;
  std::map<std::string, CLI::Option*> options_;
};

// ---- run directory ----

class Run {
 public:
  Run(const Command& cmd, const json& cfg) {
    const char* env = std::getenv("VIPNAS_RUN_ROOT");
    const fs::path root = env && *env ? env : "runs";
    std::string name = cmd.run_name();
    if (name.empty()) name = cmd.name() + (cfg.contains("seed") ? "-s" + cfg["seed"].dump() : "");
    dir_ = root / name;
    if (fs::exists(dir_) && !fs::is_empty(dir_)) {
      if (!cmd.force()) {
        throw UsageError("run directory " + dir_.string() + " already exists; pass --name <other> or --force");
      }
      fs::remove_all(dir_);
    }
    fs::create_directories(dir_);
    write("config.json", json{{"command", cmd.name()}, {"config", cfg}}.dump(2) + "\n");
  }

  const fs::path& dir() const { return dir_; }
  fs::path operator/(const std::string& f) const { return dir_ / f; }

  void write(const std::string& file, const std::string& text) const {
    std::ofstream out(dir_ / file);
    if (!out) throw DataError("cannot write " + (dir_ / file).string());
    out << text;
  }

 private:
  fs::path dir_;
};

// ---- artifacts ----

fs::path require(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p)) throw DataError("missing " + what + ": expected " + p.string() + " (produce it with `vipnas " + producer + "`)");
  return p;
}

fs::path artifact(const std::string& given, const std::string& field, const std::string& file,
                  const std::string& what, const std::string& producer) {
  if (given.empty()) throw ConfigError("--" + field + " is required (path to a " + what + " or to the run directory of `vipnas " + producer + "`)");
  fs::path p = given;
  if (fs::is_directory(p) && !file.empty()) p /= file;
  return require(p, what, producer);
}

struct DataRef {
  fs::path dir;
  pose::Dataset data;
};

DataRef open_dataset(const json& cfg) {
  fs::path p = artifact(cfg["dataset"], "dataset", "", "dataset", "generate");
  if (fs::exists(p / "dataset")) p /= "dataset";
  require(p / "dataset.json", "dataset index", "generate");
  return {p, pose::load_dataset(p)};
}

struct Splits {
  std::vector<int> train, val, test, calib;
};

std::vector<int> span_of(int lo, int hi) {
  std::vector<int> v(std::max(0, hi - lo));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

// First half trains, third quarter validates, last quarter tests.
Splits splits(const pose::Dataset& d) {
  const int n = static_cast<int>(d.samples.size());
  if (n < 4) throw DataError("dataset needs at least 4 sequences for train/val/test splits");
  Splits s{span_of(0, n / 2), span_of(n / 2, 3 * n / 4), span_of(3 * n / 4, n), {}};
  s.calib.assign(s.train.begin(), s.train.begin() + std::min<std::size_t>(32, s.train.size()));
  return s;
}

EvalData eval_data(const pose::Dataset& d, const Splits& s, const std::string& split) {
  if (split != "val" && split != "test") throw ConfigError("field 'split' must be val or test");
  return {&d, s.calib, split == "val" ? s.val : s.test, 32};
}

json checkpoint_ref(const fs::path& p) { return {{"path", p.string()}, {"hash", file_hash(p.string())}}; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

// Genome files may be bare genome JSON, a search result, or a search run directory.
json genome_json(const std::string& given, const std::string& field) {
  fs::path p = given;
  if (fs::is_directory(p)) p /= "result.json";
  require(p, "genome file", "search_spatial` or `vipnas search_temporal");
  json j = read_json(p);
  if (j.contains("best")) j = j["best"];
  if (j.contains("genome")) j = j["genome"];
  if (!j.is_object()) throw ConfigError("--" + field + ": " + p.string() + " holds no genome");
  return j;
}

// ---- training logs ----

void write_training_outputs(const Run& run, const TrainLog& log) {
  std::ostringstream csv;
  csv << "step,pass,gt,soft,total,lr\n";
  for (const auto& p : log.passes)
    csv << p.step << "," << to_string(p.kind) << "," << p.gt << "," << p.soft << "," << p.total << ","
        << log.step_lr.at(p.step) << "\n";
  run.write("log.csv", csv.str());
  std::map<PassKind, plot::Series> by_kind;
  for (const auto& p : log.passes) {
    auto& s = by_kind[p.kind];
    if (s.label.empty()) s.label = to_string(p.kind) + " total";
    if (p.kind == PassKind::Random && !s.x.empty() && s.x.back() == p.step) continue;
    s.x.push_back(p.step);
    s.y.push_back(p.total);
  }
  std::vector<plot::Series> series;
  for (auto& [k, s] : by_kind) {
    s.y = plot::smooth(s.y, 20);
    series.push_back(s);
  }
  run.write("loss.svg", plot::lines(series, {"training loss (moving average of 20 steps)", "step", "loss", true}));
}

double tail_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, v.size() / 10);
  return std::accumulate(v.end() - k, v.end(), 0.0) / k;
}

StepHook periodic_checkpoints(const Run& run, SuperNet& net, std::uint64_t seed, int every) {
  if (every <= 0) return {};
  fs::create_directories(run / "checkpoints");
  return [&run, &net, seed, every](int step, const TrainLog&) {
    if ((step + 1) % every == 0) {
      save_supernet((run / ("checkpoints/step_" + std::to_string(step + 1) + ".ckpt")).string(), net, seed,
                    {{"step", step + 1}});
    }
  };
}

TrainConfig train_config(const json& cfg) {
  TrainConfig c;
  c.epochs = cfg["epochs"];
  c.max_steps = cfg["steps"];
  c.batch_size = cfg["batch_size"];
  c.n_random = cfg["n_random"];
  c.lr = cfg["lr"];
  c.sigma = cfg["sigma"];
  c.seed = cfg["seed"];
  return c;
}

// ---- search outputs ----

void write_search_outputs(const Run& run, const SearchResult& r, const std::string& score_label) {
  std::ostringstream csv;
  csv << "rank,score,flops,genome\n";
  std::vector<plot::Point> pts;
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const auto& c = r.ranked[i];
    std::string key = c.key;
    std::replace(key.begin(), key.end(), '"', '\'');
    csv << i + 1 << "," << c.score << "," << c.flops << ",\"" << key << "\"\n";
    pts.push_back({c.flops / 1e6, c.score, i == 0});
  }
  run.write("candidates.csv", csv.str());
  run.write("scatter.svg", plot::scatter(pts, {"sampled candidates (best in red)", "MMACs", score_label, false}));
}

std::int64_t midpoint_budget(const SearchSpace& sp, int h, int w, int j) {
  const auto lo = genome_cost(sp, corner(sp, Corner::Smallest), h, w, j).total_flops;
  const auto hi = genome_cost(sp, corner(sp, Corner::Biggest), h, w, j).total_flops;
  return (lo + hi) / 2;
}

// ---- key network stored inside temporal checkpoints ----

struct KeyNet {
  SpatialGenome genome;
  StandaloneNet net;
};

KeyNet load_key(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("key_genome")) throw DataError("checkpoint holds no key network; pass a train_temporal checkpoint");
  const SearchSpace sp = space_by_name(ckpt.meta.at("space"));
  SuperNet s(sp, ckpt.meta.at("joints"), false, 0);
  Checkpoint sub;
  const std::string prefix = kKeyPrefix;
  for (const auto& [k, v] : ckpt.arrays)
    if (k.rfind(prefix, 0) == 0) sub.arrays.emplace(k.substr(prefix.size()), v);
  restore(s, sub);
  const SpatialGenome g = spatial_from_json(ckpt.meta.at("key_genome"));
  return {g, materialize(s, g)};
}

std::unique_ptr<SuperNet> net_from(const Checkpoint& ckpt) {
  auto net = std::make_unique<SuperNet>(space_by_name(ckpt.meta.at("space")), ckpt.meta.at("joints"),
                                        ckpt.meta.at("fusion"), ckpt.meta.at("seed"));
  restore(*net, ckpt);
  return net;
}

// ---- subcommands ----

void cmd_generate(const json& cfg, const Run& run) {
  pose::DataConfig c;
  c.seed = cfg["seed"];
  c.joints = cfg["joints"];
  c.height = cfg["height"];
  c.width = cfg["width"];
  c.propagation = cfg["propagation"];
  c.sequences = cfg["sequences"];
  c.occlusion_rate = cfg["occlusion_rate"];
  c.max_velocity = cfg["max_velocity"];
  c.jitter = cfg["jitter"];
  c.radius = cfg["radius"];
  const pose::Dataset d = pose::generate(c);
  pose::save_dataset(d, run / "dataset");
  int hidden = 0, labelled = 0;
  for (const auto& s : d.samples)
    for (const auto& f : s.visibility)
      for (int v : f) {
        labelled += v > 0;
        hidden += v == pose::kOccluded;
      }
  const json result{{"sequences", d.samples.size()},
                    {"frames_per_sequence", c.propagation + 1},
                    {"hidden_joint_fraction", labelled ? double(hidden) / labelled : 0.0},
                    {"dataset", {{"path", (run / "dataset").string()}, {"hash", file_hash((run / "dataset/dataset.json").string())}}},
                    {"seed", c.seed}};
  run.write("result.json", result.dump(2) + "\n");
  std::cout << "wrote " << d.samples.size() << " sequences to " << (run / "dataset").string() << "\n";
}

void cmd_train_spatial(const json& cfg, const Run& run) {
  const DataRef d = open_dataset(cfg);
  const Splits s = splits(d.data);
  const SearchSpace sp = space_by_name(cfg["space"]);
  const std::uint64_t seed = cfg["seed"];
  SuperNet net(sp, d.data.config.joints, false, seed);
  const TrainConfig tc = train_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainLog log = train_spatial(net, d.data, s.train, tc, periodic_checkpoints(run, net, seed, cfg["checkpoint_every"]));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path ckpt = run / "supernet.ckpt";
  save_supernet(ckpt.string(), net, seed, {{"phase", "spatial"}, {"dataset_hash", file_hash((d.dir / "dataset.json").string())}});
  write_training_outputs(run, log);
  const EvalData ev = eval_data(d.data, s, "val");
  const double ap_big = evaluate_spatial(net, corner(sp, Corner::Biggest), ev);
  const double ap_small = evaluate_spatial(net, corner(sp, Corner::Smallest), ev);
  const json result{{"steps", log.step_loss.size()},
                    {"seconds", secs},
                    {"final_loss", tail_mean(log.step_loss)},
                    {"val_ap", {{"biggest", ap_big}, {"smallest", ap_small}}},
                    {"checkpoint", checkpoint_ref(ckpt)},
                    {"seed", seed}};
  run.write("result.json", result.dump(2) + "\n");
  std::cout << "trained " << log.step_loss.size() << " steps; val AP biggest " << ap_big << " smallest " << ap_small << "\n";
}

void cmd_search_spatial(const json& cfg, const Run& run) {
  const DataRef d = open_dataset(cfg);
  const fs::path ckpt_path = artifact(cfg["supernet"], "supernet", "supernet.ckpt", "spatial checkpoint", "train_spatial");
  auto net = load_supernet(ckpt_path.string());
  const SearchSpace& sp = net->space();
  const Splits s = splits(d.data);
  const EvalData ev = eval_data(d.data, s, cfg["split"]);
  SearchConfig sc;
  sc.samples = cfg["samples"];
  sc.seed = cfg["seed"];
  sc.height = d.data.config.height;
  sc.width = d.data.config.width;
  sc.joints = d.data.config.joints;
  sc.budget = cfg["budget"].get<std::int64_t>() > 0 ? cfg["budget"].get<std::int64_t>()
                                                    : midpoint_budget(sp, sc.height, sc.width, sc.joints);
  const SearchResult r = search_spatial(sp, sc, [&](const SpatialGenome& g) { return evaluate_spatial(*net, g, ev); });
  write_search_outputs(run, r, "val AP");
  json result = to_json(r);
  result["best"] = {{"genome", to_json(r.best().spatial[0])}, {"score", r.best().score}, {"flops", r.best().flops}};
  result["checkpoint"] = checkpoint_ref(ckpt_path);
  run.write("result.json", result.dump(2) + "\n");
  run.write("best_genome.json", to_json(r.best().spatial[0]).dump(2) + "\n");
  std::cout << "best of " << r.ranked.size() << ": AP " << r.best().score << " at " << r.best().flops / 1e6
            << " MMACs (budget " << sc.budget / 1e6 << ")\n";
}

void cmd_train_temporal(const json& cfg, const Run& run) {
  const DataRef d = open_dataset(cfg);
  const fs::path spatial_path = artifact(cfg["supernet"], "supernet", "supernet.ckpt", "spatial checkpoint", "train_spatial");
  const Checkpoint spatial_ckpt = read_checkpoint(spatial_path.string());
  auto spatial = net_from(spatial_ckpt);
  const SearchSpace& sp = spatial->space();
  const SpatialGenome key_genome = cfg["key_genome"].get<std::string>().empty()
                                       ? corner(sp, Corner::Biggest)
                                       : spatial_from_json(genome_json(cfg["key_genome"], "key_genome"));
  if (auto v = validate(key_genome, sp); !v.ok()) throw ConfigError("key genome: " + v.describe());
  const Splits s = splits(d.data);
  StandaloneNet key = calibrated_key_network(*spatial, key_genome, eval_data(d.data, s, "val"));

  const std::uint64_t seed = cfg["seed"];
  SuperNet net(sp, d.data.config.joints, cfg["fusion"], seed + 1);
  net.copy_from(*spatial);
  TrainConfig tc = train_config(cfg);
  tc.propagation = cfg["propagation"];
  const auto t0 = std::chrono::steady_clock::now();
  const TrainLog log = train_temporal(key, net, d.data, s.train, tc, periodic_checkpoints(run, net, seed, cfg["checkpoint_every"]));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Checkpoint out = snapshot(net, seed + 1, {{"phase", "temporal"}, {"key_genome", to_json(key_genome)},
                                            {"propagation", tc.propagation}, {"spatial_checkpoint_hash", file_hash(spatial_path.string())}});
  for (auto& [k, v] : snapshot(*spatial, 0).arrays) out.arrays.emplace(kKeyPrefix + k, v);
  const fs::path ckpt = run / "temporal.ckpt";
  write_checkpoint(ckpt.string(), out);
  write_training_outputs(run, log);
  const json result{{"steps", log.step_loss.size()},
                    {"seconds", secs},
                    {"final_loss", tail_mean(log.step_loss)},
                    {"fusion", net.has_fusion()},
                    {"checkpoint", checkpoint_ref(ckpt)},
                    {"seed", seed}};
  run.write("result.json", result.dump(2) + "\n");
  std::cout << "trained " << log.step_loss.size() << " temporal steps; final loss " << tail_mean(log.step_loss) << "\n";
}

void cmd_search_temporal(const json& cfg, const Run& run) {
  const DataRef d = open_dataset(cfg);
  const fs::path ckpt_path = artifact(cfg["checkpoint"], "checkpoint", "temporal.ckpt", "temporal checkpoint", "train_temporal");
  const Checkpoint ckpt = read_checkpoint(ckpt_path.string());
  KeyNet key = load_key(ckpt);
  auto net = net_from(ckpt);
  const SearchSpace& sp = net->space();
  const Splits s = splits(d.data);
  const EvalData ev = eval_data(d.data, s, cfg["split"]);
  SearchConfig sc;
  sc.samples = cfg["samples"];
  sc.seed = cfg["seed"];
  sc.propagation = cfg["propagation"];
  sc.height = d.data.config.height;
  sc.width = d.data.config.width;
  sc.joints = d.data.config.joints;
  sc.fusion = net->has_fusion();
  if (sc.propagation + 1 > d.data.samples.at(0).frame_count()) {
    throw DataError("T=" + std::to_string(sc.propagation) + " needs sequences of " + std::to_string(sc.propagation + 1) + " frames");
  }
  sc.budget = cfg["budget"].get<std::int64_t>() > 0 ? cfg["budget"].get<std::int64_t>()
                                                    : sc.propagation * midpoint_budget(sp, sc.height, sc.width, sc.joints);
  const VideoEvaluator evaluate = [&](const std::vector<TemporalGenome>& f) { return evaluate_video(key.net, *net, f, ev).ap; };
  const SearchResult r = cfg["shared"].get<bool>() ? search_shared(sp, sc, evaluate) : search_temporal(sp, sc, evaluate);
  write_search_outputs(run, r, "val AP (frames 1..T)");
  const VideoGenome best{key.genome, r.best().frames};
  json result = to_json(r);
  result["best"] = {{"genome", to_json(best)}, {"score", r.best().score}, {"flops", r.best().flops}};
  result["checkpoint"] = checkpoint_ref(ckpt_path);
  run.write("result.json", result.dump(2) + "\n");
  run.write("best_genome.json", to_json(best).dump(2) + "\n");
  std::cout << "best of " << r.ranked.size() << ": AP " << r.best().score << " at " << r.best().flops / 1e6
            << " MMACs over " << sc.propagation << " frames (budget " << sc.budget / 1e6 << ")\n";
}

void cmd_eval(const json& cfg, const Run& run) {
  const DataRef d = open_dataset(cfg);
  const fs::path ckpt_path = artifact(cfg["checkpoint"], "checkpoint", "", "checkpoint", "train_spatial` or `vipnas train_temporal");
  fs::path p = ckpt_path;
  const Checkpoint ckpt = read_checkpoint(p.string());
  auto net = net_from(ckpt);
  const Splits s = splits(d.data);
  const EvalData ev = eval_data(d.data, s, cfg["split"]);
  const auto& dc = d.data.config;
  json result{{"checkpoint", checkpoint_ref(ckpt_path)}, {"split", cfg["split"]}};
  if (cfg["genome"].get<std::string>().empty()) throw ConfigError("--genome is required (genome JSON, search result or search run directory)");
  const json g = genome_json(cfg["genome"], "genome");
  if (ckpt.meta.contains("key_genome")) {
    KeyNet key = load_key(ckpt);
    const VideoGenome v = video_from_json(g);
    if (v.propagation_length() + 1 > d.data.samples.at(0).frame_count()) throw DataError("genome has more frames than the dataset");
    const VideoScore sc = evaluate_video(key.net, *net, v.frames, ev);
    std::int64_t flops = 0;
    json per = json::array();
    for (const auto& f : v.frames) {
      const auto c = frame_flops(net->space(), f, dc.height, dc.width, dc.joints, net->has_fusion());
      per.push_back(c);
      flops += c;
    }
    result.update({{"ap", sc.ap}, {"frame_ap", sc.frame_ap}, {"pck", sc.pck}, {"flops", flops}, {"frame_flops", per},
                   {"key_flops", genome_cost(net->space(), key.genome, dc.height, dc.width, dc.joints).total_flops}});
    std::cout << "AP " << sc.ap << " PCK " << sc.pck << " over " << v.frames.size() << " frames at " << flops / 1e6 << " MMACs\n";
  } else {
    const SpatialGenome sg = spatial_from_json(g);
    const double ap = evaluate_spatial(*net, sg, ev);
    const auto flops = genome_cost(net->space(), sg, dc.height, dc.width, dc.joints).total_flops;
    result.update({{"ap", ap}, {"flops", flops}});
    std::cout << "AP " << ap << " at " << flops / 1e6 << " MMACs\n";
  }
  run.write("result.json", result.dump(2) + "\n");
}

void cmd_flops(const json& cfg, const Run& run) {
  const SearchSpace sp = space_by_name(cfg["space"]);
  const int h = cfg["height"], w = cfg["width"], j = cfg["joints"];
  CostReport r;
  json genome;
  if (cfg["genome"].get<std::string>().empty()) {
    const SpatialGenome g = sp.name == "sbl_resnet50" ? sbl_resnet50_genome() : corner(sp, Corner::Biggest);
    r = genome_cost(sp, g, h, w, j);
    genome = to_json(g);
  } else {
    genome = genome_json(cfg["genome"], "genome");
    if (genome.contains("frames")) r = video_cost(sp, video_from_json(genome), h, w, j);
    else if (genome.contains("fusion") && !genome["fusion"].is_null()) r = genome_cost(sp, temporal_from_json(genome), h, w, j);
    else r = genome_cost(sp, spatial_from_json(genome), h, w, j);
  }
  std::ostringstream csv;
  csv << "layer,macs,params\n";
  for (const auto& l : r.per_layer) csv << l.name << "," << l.flops << "," << l.params << "\n";
  csv << "total," << r.total_flops << "," << r.total_params << "\n";
  run.write("layers.csv", csv.str());
  json result{{"space", sp.name}, {"input", {h, w}}, {"joints", j}, {"genome", genome},
              {"total_macs", r.total_flops}, {"total_params", r.total_params}};
  if (!r.per_frame.empty()) result["per_frame_macs"] = r.per_frame;
  run.write("result.json", result.dump(2) + "\n");
  std::cout << csv.str();
  char line[160];
  std::snprintf(line, sizeof line, "%.3f GMACs, %.2fM params (%s, %dx%d, %d joints)\n", r.total_flops / 1e9,
                r.total_params / 1e6, sp.name.c_str(), h, w, j);
  std::cout << line;
}

std::vector<Field> training_fields(int epochs, bool temporal) {
  std::vector<Field> f{
      {"dataset", "", "dataset directory or generate run directory"},
      {"supernet", "", "spatial checkpoint or train_spatial run directory"},
      {"seed", 0, "random seed"},
      {"epochs", epochs, "training epochs"},
      {"steps", -1, "stop after this many steps when positive"},
      {"batch_size", 16, "batch size"},
      {"n_random", 2, "random sub-networks per step"},
      {"lr", 3e-3, "base learning rate"},
      {"sigma", 2.0, "target Gaussian sigma in heatmap cells"},
      {"checkpoint_every", 200, "periodic checkpoint interval in steps (0 disables)"},
  };
  if (temporal) {
    f.push_back({"key_genome", "", "key-frame genome (JSON, search result or search_spatial run); default biggest corner"});
    f.push_back({"fusion", true, "train with the temporal fusion module"});
    f.push_back({"propagation", 3, "T, non-key frames per clip"});
  } else {
    f.erase(f.begin() + 1);
    f.push_back({"space", "toy", "search space: toy | resnet50 | sbl_resnet50"});
  }
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video pose super-network search: data, training, search and cost tools"};
  app.require_subcommand(1);
  std::vector<std::pair<std::unique_ptr<Command>, void (*)(const json&, const Run&)>> cmds;
  auto add = [&](std::string name, std::string about, std::vector<Field> fields, void (*fn)(const json&, const Run&)) {
    cmds.emplace_back(std::make_unique<Command>(app, std::move(name), std::move(about), std::move(fields)), fn);
  };
  add("generate", "Render a synthetic multi-frame pose dataset",
      {{"seed", 0, "random seed"},
       {"joints", 5, "joints per instance"},
       {"height", 64, "image height (multiple of 4)"},
       {"width", 48, "image width (multiple of 4)"},
       {"propagation", 4, "non-key frames per sequence"},
       {"sequences", 256, "number of sequences"},
       {"occlusion_rate", 0.3, "probability that a joint gets a hidden run"},
       {"max_velocity", 3.0, "maximum per-frame displacement in pixels"},
       {"jitter", 0.4, "per-joint positional jitter in pixels"},
       {"radius", 3, "marker radius in pixels"}},
      cmd_generate);
  add("train_spatial", "Train the key-frame super-network with the sandwich rule", training_fields(40, false), cmd_train_spatial);
  add("search_spatial", "Random search for a key-frame network under a MAC budget",
      {{"dataset", "", "dataset directory or generate run directory"},
       {"supernet", "", "spatial checkpoint or train_spatial run directory"},
       {"budget", 0, "MAC budget C; 0 picks the midpoint of the corner costs"},
       {"samples", 64, "candidates M"},
       {"split", "val", "scoring split: val | test"},
       {"seed", 0, "random seed"}},
      cmd_search_spatial);
  add("train_temporal", "Train the propagation super-network from a frozen key network", training_fields(20, true),
      cmd_train_temporal);
  add("search_temporal", "Per-frame search under a total MAC budget over T frames",
      {{"dataset", "", "dataset directory or generate run directory"},
       {"checkpoint", "", "temporal checkpoint or train_temporal run directory"},
       {"budget", 0, "total MAC budget C over frames 1..T; 0 picks T times the corner midpoint"},
       {"samples", 64, "candidates M"},
       {"propagation", 3, "T, frames searched after the key frame"},
       {"shared", false, "replicate one genome over all frames"},
       {"split", "val", "scoring split: val | test"},
       {"seed", 0, "random seed"}},
      cmd_search_temporal);
  add("eval", "Score a genome with a checkpoint on the validation or test split",
      {{"dataset", "", "dataset directory or generate run directory"},
       {"checkpoint", "", "spatial or temporal checkpoint file"},
       {"genome", "", "genome JSON, search result or search run directory"},
       {"split", "test", "val | test"}},
      cmd_eval);
  add("flops", "Per-layer MAC and parameter counts",
      {{"space", "sbl_resnet50", "search space: toy | resnet50 | sbl_resnet50"},
       {"genome", "", "genome JSON (spatial, temporal or video); default standard/biggest"},
       {"height", 256, "input height"},
       {"width", 192, "input width"},
       {"joints", 17, "heatmap channels"}},
      cmd_flops);

  CLI11_PARSE(app, argc, argv);
  for (auto& [cmd, fn] : cmds) {
    if (!cmd->chosen()) continue;
    std::unique_ptr<Run> run;
    try {
      const json cfg = cmd->resolve();
      run = std::make_unique<Run>(*cmd, cfg);
      fn(cfg, *run);
      std::cout << "run directory: " << run->dir().string() << "\n";
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "vipnas " << cmd->name() << ": error: " << e.what() << "\n";
      if (run) {
        std::error_code ec;
        fs::remove_all(run->dir(), ec);
      }
      return 1;
    }
  }
  return 1;
}
