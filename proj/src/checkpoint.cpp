#include "vipnas/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vipnas/errors.hpp"

namespace vipnas {

namespace {

constexpr char kMagic[8] = {'V', 'P', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("checkpoint truncated");
  }
  std::string b_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor stats_tensor(const std::vector<float>& v) {
  Tensor t(1, static_cast<int>(v.size()), 1, 1);
  std::copy(v.begin(), v.end(), t.vec().begin());
  return t;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string meta = ckpt.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, 4);
    for (int d : {t.n(), t.c(), t.h(), t.w()}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float f : t.vec()) put_f32(out, f);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  Reader r(slurp(path));
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw DataError(path + " is not a checkpoint");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    c.meta = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto ndim = r.get<std::uint32_t>();
    if (ndim < 1 || ndim > 4) throw DataError("array " + name + " has " + std::to_string(ndim) + " dims");
    std::array<int, 4> dims{1, 1, 1, 1};
    for (std::uint32_t d = 0; d < ndim; ++d) dims[4 - ndim + d] = static_cast<int>(r.get<std::uint32_t>());
    Tensor t(dims[0], dims[1], dims[2], dims[3]);
    for (float& f : t.vec()) f = std::bit_cast<float>(r.get<std::uint32_t>());
    c.arrays.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw DataError("trailing bytes in " + path);
  return c;
}

std::string file_hash(const std::string& path) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : slurp(path)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

Checkpoint snapshot(SuperNet& net, std::uint64_t seed, nlohmann::json extra) {
  Checkpoint c;
  c.meta = extra.is_object() ? std::move(extra) : nlohmann::json::object();
  c.meta["space"] = net.space().name;
  c.meta["joints"] = net.joints();
  c.meta["fusion"] = net.has_fusion();
  c.meta["seed"] = seed;
  for (auto& [name, p] : net.named_parameters()) c.arrays.emplace(name, p->value());
  for (auto& [name, s] : net.named_norm_stats()) {
    c.arrays.emplace(name + ".running_mean", stats_tensor(s->mean));
    c.arrays.emplace(name + ".running_var", stats_tensor(s->var));
  }
  return c;
}

void restore(SuperNet& net, const Checkpoint& ckpt) {
  auto find = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end()) throw DataError("checkpoint lacks " + name);
    if (!(it->second.shape() == shape)) {
      throw DataError("checkpoint " + name + " has shape " + it->second.shape().str() + ", expected " + shape.str());
    }
    return it->second;
  };
  for (auto& [name, p] : net.named_parameters()) p->value() = find(name, p->value().shape());
  for (auto& [name, s] : net.named_norm_stats()) {
    const Shape shape{1, static_cast<int>(s->mean.size()), 1, 1};
    const auto& m = find(name + ".running_mean", shape).vec();
    const auto& v = find(name + ".running_var", shape).vec();
    std::copy(m.begin(), m.end(), s->mean.begin());
    std::copy(v.begin(), v.end(), s->var.begin());
  }
}

std::unique_ptr<SuperNet> load_supernet(const std::string& path) {
  Checkpoint c = read_checkpoint(path);
  std::unique_ptr<SuperNet> net;
  try {
    net = std::make_unique<SuperNet>(space_by_name(c.meta.at("space").get<std::string>()),
                                     c.meta.at("joints").get<int>(), c.meta.at("fusion").get<bool>(),
                                     c.meta.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": incomplete checkpoint metadata (" + e.what() + ")");
  }
  restore(*net, c);
  return net;
}

void save_supernet(const std::string& path, SuperNet& net, std::uint64_t seed, nlohmann::json extra) {
  write_checkpoint(path, snapshot(net, seed, std::move(extra)));
}

}  // namespace vipnas
