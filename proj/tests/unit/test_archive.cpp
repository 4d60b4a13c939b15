#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "promptseg/error.hpp"
#include "promptseg/hashing.hpp"
#include "promptseg/tensor_archive.hpp"
#include "support.hpp"

using namespace promptseg;

namespace {
std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("promptseg_test_" + name);
}
}  // namespace

TEST(Fnv1a, KnownVectors) {
  Fnv1a h;
  EXPECT_EQ(h.digest(), 14695981039346656037ull);
  h.update(std::string_view("a"));
  EXPECT_EQ(h.digest(), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(to_hex(0xabcull), "0000000000000abc");
}

TEST(TensorArchive, RoundTripPreservesValuesAndMetadata) {
  TensorArchive a;
  a.metadata()["kind"] = "test";
  const MatrixD d = fixtures::random_matrix(3, 5, 1);
  MatrixF f = fixtures::random_matrix(2, 2, 2).cast<float>();
  a.put("d", d);
  a.put("f", f);
  const auto path = temp_path("archive.bin");
  a.save(path);
  const auto b = TensorArchive::load(path);
  EXPECT_EQ(b.metadata()["kind"], "test");
  EXPECT_EQ(b.get_f64("d", 3, 5), d);
  EXPECT_EQ(b.get_f32("f"), f);
  EXPECT_THROW(b.get_f64("d", 4, 5), FormatError);
  EXPECT_THROW(b.get_f64("missing"), FormatError);
  std::filesystem::remove(path);
}

TEST(TensorArchive, RejectsCorruptFile) {
  const auto path = temp_path("corrupt.bin");
  std::ofstream(path) << "not an archive";
  EXPECT_THROW(TensorArchive::load(path), FormatError);
  std::filesystem::remove(path);
}
