#include <catch2/catch.hpp>

#include <cstdio>
#include <sstream>

#include "fcmnet/io.hpp"
#include "fcmnet/tensor.hpp"

using namespace fcmnet;

TEST_CASE("tensor shape invariants") {
  REQUIRE_THROWS_AS(make_tensor<double>(Shape4{0, 1, 1, 1}), ShapeError);
  REQUIRE_THROWS_AS(make_tensor<double>(Shape4{1, 1, -2, 1}), ShapeError);
  auto t = make_tensor<double>(Shape4{2, 3, 4, 5});
  REQUIRE(t->numel() == 120);
  REQUIRE(t->data.size() == 120);
  REQUIRE_FALSE(t->has_grad());
  t->ensure_grad();
  REQUIRE(t->grad.size() == t->data.size());
}

TEST_CASE("tensor indexing is row-major") {
  auto t = make_tensor<double>(Shape4{2, 3, 4, 5});
  t->at(1, 2, 3, 4) = 42.0;
  REQUIRE(t->data.back() == 42.0);
  t->at(0, 0, 0, 1) = 7.0;
  REQUIRE(t->data[1] == 7.0);
  REQUIRE(t->offset(0, 1, 0, 0) == 20);
  REQUIRE(t->offset(1, 0, 0, 0) == 60);
}

TEST_CASE("make_tensor_from validates element count") {
  REQUIRE_THROWS_AS(make_tensor_from<double>(Shape4{1, 1, 2, 2}, {1.0, 2.0}), ShapeError);
  auto t = make_tensor_from<double>(Shape4{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  REQUIRE(t->at(0, 0, 1, 1) == 4.0);
}

TEST_CASE("tensor dump round-trips bitwise") {
  auto t = make_tensor<double>(Shape4{2, 3, 4, 5});
  for (size_t i = 0; i < t->data.size(); ++i) t->data[i] = 0.1 * static_cast<double>(i) - 3.7;
  const std::string bytes = tensor_to_bytes(*t);
  REQUIRE(bytes.size() == 16 + 120 * 8);
  std::istringstream is(bytes, std::ios::binary);
  auto back = read_tensor<double>(is);
  REQUIRE(back->shape == t->shape);
  REQUIRE(back->data == t->data);
}

TEST_CASE("tensor dump header is four little-endian u32 dims") {
  auto t = make_tensor<double>(Shape4{1, 2, 3, 260});
  const std::string bytes = tensor_to_bytes(*t);
  const auto u8 = [&](size_t i) { return static_cast<unsigned char>(bytes[i]); };
  REQUIRE(u8(0) == 1);
  REQUIRE(u8(4) == 2);
  REQUIRE(u8(8) == 3);
  // 260 = 0x104 little-endian
  REQUIRE(u8(12) == 4);
  REQUIRE(u8(13) == 1);
  REQUIRE(u8(14) == 0);
  REQUIRE(u8(15) == 0);
}

TEST_CASE("tensor dump payload is little-endian f64") {
  auto t = make_tensor<double>(Shape4{1, 1, 1, 1});
  t->data[0] = 1.0;  // bits 0x3FF0000000000000
  const std::string bytes = tensor_to_bytes(*t);
  REQUIRE(static_cast<unsigned char>(bytes[16]) == 0x00);
  REQUIRE(static_cast<unsigned char>(bytes[22]) == 0xF0);
  REQUIRE(static_cast<unsigned char>(bytes[23]) == 0x3F);
}

TEST_CASE("truncated dumps are rejected") {
  auto t = make_tensor<double>(Shape4{1, 1, 2, 2});
  std::string bytes = tensor_to_bytes(*t);
  bytes.resize(bytes.size() - 3);
  std::istringstream is(bytes, std::ios::binary);
  REQUIRE_THROWS_AS(read_tensor<double>(is), IoError);
}

TEST_CASE("tensor dump file round trip") {
  auto t = make_tensor<double>(Shape4{1, 2, 2, 2});
  for (size_t i = 0; i < t->data.size(); ++i) t->data[i] = static_cast<double>(i) * 0.25;
  const std::string path = "test_dump_roundtrip.tensor";
  write_tensor_file(path, *t);
  auto back = read_tensor_file<double>(path);
  REQUIRE(back->data == t->data);
  std::remove(path.c_str());
}

TEST_CASE("pgm rendering") {
  auto t = make_tensor<double>(Shape4{1, 2, 2, 3});
  // channel means: row major [0, 1, 2, 3, 4, 5]
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 0; i < 6; ++i) t->data[static_cast<size_t>(c * 6 + i)] = static_cast<double>(i);
  const std::string pgm = tensor_to_pgm(*t);
  REQUIRE(pgm.substr(0, 3) == "P5\n");
  REQUIRE(pgm.find("3 2\n255\n") != std::string::npos);
  REQUIRE(pgm.size() == pgm.find("255\n") + 4 + 6);
  REQUIRE(static_cast<unsigned char>(pgm[pgm.size() - 6]) == 0);    // min -> 0
  REQUIRE(static_cast<unsigned char>(pgm.back()) == 255);           // max -> 255

  SECTION("constant map renders as zeros") {
    auto flat = make_tensor<double>(Shape4{1, 1, 2, 2}, 3.5);
    const std::string p = tensor_to_pgm(*flat);
    REQUIRE(static_cast<unsigned char>(p.back()) == 0);
  }
}

TEST_CASE("loss csv formatting") {
  REQUIRE(losses_to_csv(std::vector<double>{}) == "step,loss\n");
  const std::string csv = losses_to_csv(std::vector<double>{1.5, 0.25});
  REQUIRE(csv == "step,loss\n0,1.5\n1,0.25\n");
}
