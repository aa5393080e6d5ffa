#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmos/io.hpp"
#include "cmos/random.hpp"
#include "doctest.h"

using namespace cmos;

TEST_CASE("CMOT1 byte layout") {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, Tensor<float>({2, 1}, {1.0f, -2.0f}));
  const std::string bytes = out.str();
  REQUIRE(bytes.size() == 5 + 1 + 1 + 2 * 4 + 2 * 4);
  CHECK(bytes.substr(0, 5) == "CMOT1");
  CHECK(bytes[5] == 0);  // f32
  CHECK(bytes[6] == 2);  // rank
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);
  CHECK(bytes[8] == 0);
  CHECK(static_cast<unsigned char>(bytes[11]) == 1);
  // 1.0f little-endian = 00 00 80 3f
  CHECK(static_cast<unsigned char>(bytes[15]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[17]) == 0x80);
  CHECK(static_cast<unsigned char>(bytes[18]) == 0x3f);
}

TEST_CASE("CMOT1 round trip is bitwise for random shapes and both dtypes") {
  Rng rng(9);
  std::uniform_int_distribution<int> rank_d(1, 4), ext_d(1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s(static_cast<std::size_t>(rank_d(rng)));
    for (auto& e : s) e = static_cast<std::size_t>(ext_d(rng));
    auto f = normal_tensor<float>(s, 0, 100, rng);
    auto d = normal_tensor<double>(s, 0, 1e-3, rng);
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_tensor(buf, f);
    write_tensor(buf, d);
    CHECK(bitwise_equal(read_tensor<float>(buf), f));
    CHECK(bitwise_equal(read_tensor<double>(buf), d));
  }
}

TEST_CASE("CMOT1 converts dtype on read") {
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  write_tensor(buf, Tensor<float>::from({0.5f, 1.25f}));
  CHECK(read_tensor<double>(buf) == Tensor<double>::from({0.5, 1.25}));
}

TEST_CASE("CMOT1 errors") {
  std::istringstream bad_magic(std::string("CMOT2\0\1\1\0\0\0", 11), std::ios::binary);
  CHECK_THROWS_WITH_AS(read_tensor<float>(bad_magic), doctest::Contains("bad magic"), FormatError);

  std::ostringstream out(std::ios::binary);
  write_tensor(out, Tensor<double>::from({1, 2, 3}));
  const std::string full = out.str();
  std::istringstream truncated(full.substr(0, full.size() - 3), std::ios::binary);
  CHECK_THROWS_WITH_AS(read_tensor<double>(truncated), doctest::Contains("unexpected end"), FormatError);
}

TEST_CASE("save and load through the filesystem") {
  const auto dir = std::filesystem::temp_directory_path() / "cmos_test_io";
  std::filesystem::create_directories(dir);
  Tensor<float> t({3, 2, 2}, 0.125f);
  save_tensor(dir / "t.cmot", t);
  CHECK(bitwise_equal(load_tensor<float>(dir / "t.cmot"), t));
  CHECK_FALSE(std::filesystem::exists(dir / "t.cmot.tmp"));
  CHECK_THROWS_AS(load_tensor<float>(dir / "missing.cmot"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
}
