#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "net_util.hpp"
#include "test_util.hpp"
#include "vipnas/checkpoint.hpp"
#include "vipnas/errors.hpp"

using namespace vipnas;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vipnas_" + name)).string();
}

}  // namespace

TEST(Checkpoint, ContainerRoundTripIsBitExact) {
  Checkpoint c;
  c.meta["note"] = "x";
  c.arrays.emplace("a", Tensor(1, 2, 1, 1));
  c.arrays["a"].vec() = {1.5f, -0.0f};
  c.arrays.emplace("b", Tensor(2, 1, 2, 1, 3.25f));
  const std::string path = temp_path("container.bin");
  write_checkpoint(path, c);
  Checkpoint r = read_checkpoint(path);
  EXPECT_EQ(r.meta, c.meta);
  ASSERT_EQ(r.arrays.size(), 2u);
  EXPECT_EQ(r.arrays["b"].shape(), (Shape{2, 1, 2, 1}));
  EXPECT_EQ(std::memcmp(r.arrays["a"].vec().data(), c.arrays["a"].vec().data(), 8), 0);
  EXPECT_EQ(file_hash(path), file_hash(path));
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderAndFloatsAreLittleEndian) {
  Checkpoint c;
  c.arrays.emplace("w", Tensor(1, 1, 1, 1, 1.0f));
  const std::string path = temp_path("endian.bin");
  write_checkpoint(path, c);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes.substr(0, 8), "VPNCKPT1");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
  // 1.0f = 0x3f800000
  const std::string tail = bytes.substr(bytes.size() - 4);
  EXPECT_EQ(static_cast<unsigned char>(tail[0]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(tail[2]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(tail[3]), 0x3f);
  std::filesystem::remove(path);
}

TEST(Checkpoint, SupernetRestoresIdenticalOutputs) {
  SuperNet a(toy_space(), 5, true, 3);
  std::mt19937_64 rng(3);
  vipnas::testing::randomise_state(a, rng);
  const std::string path = temp_path("net.bin");
  save_supernet(path, a, 3, {{"phase", "temporal"}});
  auto b = load_supernet(path);
  EXPECT_TRUE(b->has_fusion());
  const TemporalGenome g = sample_temporal(toy_space(), 5);
  ag::Var x = ag::constant(vipnas::testing::random_tensor({2, 3, 64, 48}, rng));
  ag::Var h = ag::constant(vipnas::testing::random_tensor({2, 5, 16, 12}, rng));
  ag::NoGradGuard ng;
  Tensor ya = a.forward_temporal(x, h, g, ag::NormMode::Eval)->value;
  Tensor yb = b->forward_temporal(x, h, g, ag::NormMode::Eval)->value;
  EXPECT_EQ(ya.vec(), yb.vec());
  EXPECT_EQ(read_checkpoint(path).meta.at("phase"), "temporal");
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  const std::string path = temp_path("bad.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPT";
  }
  EXPECT_THROW(read_checkpoint(path), DataError);
  SuperNet a(toy_space(), 5, false, 1);
  save_supernet(path, a, 1);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(read_checkpoint(path), DataError);
  EXPECT_THROW(read_checkpoint(temp_path("missing.bin")), DataError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  SuperNet a(toy_space(), 5, false, 1);
  Checkpoint c = snapshot(a, 1);
  c.arrays["final.weight"] = Tensor(1, 1, 1, 1);
  SuperNet b(toy_space(), 5, false, 2);
  EXPECT_THROW(restore(b, c), DataError);
  c.arrays.erase("final.weight");
  EXPECT_THROW(restore(b, c), DataError);
}
