#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"
#include "vipnas/supernet.hpp"
#include "vipnas/tensor.hpp"

namespace vipnas {

// Little-endian container: magic, version, metadata JSON, named float32 arrays.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> arrays;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// FNV-1a over the file bytes, as 16 hex digits.
std::string file_hash(const std::string& path);

// Weights and running statistics; meta gains space/joints/fusion/seed.
Checkpoint snapshot(SuperNet& net, std::uint64_t seed, nlohmann::json extra = {});
// Copies every array into `net`; throws DataError on a missing name or shape mismatch.
void restore(SuperNet& net, const Checkpoint& ckpt);
// Rebuilds the network described by the metadata and restores it.
std::unique_ptr<SuperNet> load_supernet(const std::string& path);
void save_supernet(const std::string& path, SuperNet& net, std::uint64_t seed,
                   nlohmann::json extra = {});

}  // namespace vipnas
