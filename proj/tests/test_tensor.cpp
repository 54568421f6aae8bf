#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "spp/errors.hpp"
#include "spp/tensor.hpp"

using namespace spp;

TEST_CASE("rank-0 tensor holds one scalar") {
  Tensor t;
  CHECK(t.rank() == 0);
  CHECK(t.size() == 1);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("matrix factory is row-major") {
  auto m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.shape() == Shape{2, 3});
  CHECK(m.at(1, 0) == 4);
  CHECK(m[2] == 3);
}

TEST_CASE("shape/data mismatch is rejected") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::vector({1, 2, 3}).reshaped({2, 2}), ShapeError);
}

TEST_CASE("blob round trip keeps every bit") {
  Tensor t(Shape{2, 3, 1}, std::vector<double>{0.1, -0.0, 1e-310, std::numeric_limits<double>::max(), -3.5, 7});
  std::stringstream ss;
  write_tensor_blob(ss, t);
  auto back = read_tensor_blob(ss);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), 6 * sizeof(double)) == 0);
  CHECK(std::signbit(back[1]));
}

TEST_CASE("blob layout is little-endian u64 rank, dims, f64 data") {
  auto bytes = encode_tensor_blob(Tensor::vector({1.0}));
  REQUIRE(bytes.size() == 8 + 8 + 8);
  CHECK(static_cast<unsigned char>(bytes[0]) == 1);
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  // 1.0 = 0x3FF0000000000000, stored low byte first.
  CHECK(static_cast<unsigned char>(bytes[23]) == 0x3F);
  CHECK(static_cast<unsigned char>(bytes[22]) == 0xF0);
}

TEST_CASE("truncated blob reports the fault offset") {
  auto bytes = encode_tensor_blob(Tensor::matrix({{1, 2}, {3, 4}}));
  bytes.resize(bytes.size() - 3);
  std::size_t off = 0;
  try {
    decode_tensor_blob(std::span<const char>(bytes.data(), bytes.size()), off);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 24);  // data starts after rank + two dims
  }
}

TEST_CASE("absurd rank is rejected before allocation") {
  std::string bytes;
  append_u64(bytes, 1000);
  std::size_t off = 0;
  CHECK_THROWS_AS(decode_tensor_blob(std::span<const char>(bytes.data(), bytes.size()), off), ParseError);
}

TEST_CASE("all_finite spots NaN and infinity") {
  CHECK(Tensor::vector({1, 2}).all_finite());
  CHECK_FALSE(Tensor::vector({1, std::nan("")}).all_finite());
  CHECK_FALSE(Tensor::vector({std::numeric_limits<double>::infinity()}).all_finite());
}
