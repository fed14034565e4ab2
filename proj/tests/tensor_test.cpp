#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "oracles.hpp"
#include "pcdal/ptns.hpp"
#include "pcdal/random.hpp"
#include "pcdal/tensor.hpp"

namespace {

using pcdal::DType;
using pcdal::Tensor;

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pcdal_tensor_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({}, {}), pcdal::ShapeError);
  EXPECT_THROW(Tensor({2, 0}, {}), pcdal::ShapeError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}, {1.0}), pcdal::ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), pcdal::ShapeError);
}

TEST(Tensor, RowMajorIndexing) {
  const Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_EQ(t.strides(), (pcdal::Shape{3, 1}));
  EXPECT_THROW((void)t.at({2, 0}), pcdal::ShapeError);
}

TEST(Tensor, F32RoundsToBinary32) {
  const Tensor t({1}, {0.1}, DType::F32);
  EXPECT_EQ(t[0], static_cast<double>(0.1f));
  EXPECT_NE(t[0], 0.1);
}

TEST(Ptns, RoundTripSevens) {
  const auto t = Tensor::filled({2, 3}, 7.0);
  const auto path = scratch("sevens.ptns");
  pcdal::write_tensor(t, path);
  const auto bytes = slurp(path);
  const auto back = pcdal::read_tensor(path);
  EXPECT_EQ(back, t);
  pcdal::write_tensor(back, path);
  EXPECT_EQ(slurp(path), bytes);
}

TEST(Ptns, HeaderLayout) {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6}, DType::F32);
  const auto b = pcdal::ptns::encode(t);
  ASSERT_EQ(b.size(), 8u + 2 * 8 + 6 * 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PTNS");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0x01);
  EXPECT_EQ(b[6], 2);
  EXPECT_EQ(b[7], 0);
  EXPECT_EQ(b[8], 2);
  EXPECT_EQ(b[16], 3);
  float first = 0;
  std::memcpy(&first, b.data() + 24, 4);
  EXPECT_EQ(first, 1.0f);
  EXPECT_EQ(pcdal::ptns::encode(t.as(DType::F64))[5], 0x02);
}

TEST(Ptns, RandomRoundTripBothDtypes) {
  pcdal::Pcg32 rng(5);
  for (int i = 0; i < 50; ++i) {
    pcdal::Shape shape;
    const auto rank = 1 + rng.bounded(4);
    for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(1 + rng.bounded(5));
    const auto t = testgen::random_tensor(rng, shape).as(i % 2 ? DType::F32 : DType::F64);
    EXPECT_EQ(pcdal::ptns::decode(pcdal::ptns::encode(t)), t);
  }
}

TEST(Ptns, WrongMagic) {
  auto b = pcdal::ptns::encode(Tensor::filled({2}, 1.0));
  b[0] = 'X';
  EXPECT_THROW(pcdal::ptns::decode(b), pcdal::FormatError);
}

TEST(Ptns, BadHeaderFields) {
  const auto good = pcdal::ptns::encode(Tensor::filled({2}, 1.0));
  for (std::size_t at : {4u, 5u, 6u, 7u}) {
    auto b = good;
    b[at] = 0x7f;
    EXPECT_THROW(pcdal::ptns::decode(b), pcdal::FormatError) << "byte " << at;
  }
  EXPECT_THROW(pcdal::ptns::decode(std::vector<std::uint8_t>(good.begin(), good.begin() + 5)),
               pcdal::FormatError);
}

TEST(Ptns, PayloadShorterThanShape) {
  auto b = pcdal::ptns::encode(Tensor::filled({2, 2}, 1.0));
  b.resize(b.size() - 8);
  EXPECT_THROW(pcdal::ptns::decode(b), pcdal::TruncationError);
  auto longer = pcdal::ptns::encode(Tensor::filled({2, 2}, 1.0));
  longer.push_back(0);
  EXPECT_THROW(pcdal::ptns::decode(longer), pcdal::TruncationError);
}

TEST(Ptns, MissingFile) {
  EXPECT_THROW(pcdal::read_tensor(scratch("absent.ptns")), pcdal::IoError);
}

TEST(Softmax, Examples) {
  const auto a = pcdal::softmax(Tensor({2}, {0.0, 0.0}), 0);
  EXPECT_EQ(a[0], 0.5);
  EXPECT_EQ(a[1], 0.5);
  const auto b = pcdal::softmax(Tensor({2}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(b[0], 0.25, 1e-15);
  EXPECT_NEAR(b[1], 0.75, 1e-15);
}

TEST(Softmax, MatchesDirectFormulaAndSumsToOne) {
  pcdal::Pcg32 rng(9);
  const auto t = testgen::random_tensor(rng, {3, 4, 5});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto s = pcdal::softmax(t, axis);
    const auto strides = t.strides();
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
      const std::size_t k = flat / strides[axis] % t.extent(axis);
      const std::size_t base = flat - k * strides[axis];
      double denom = 0.0;
      for (std::size_t j = 0; j < t.extent(axis); ++j) denom += std::exp(t[base + j * strides[axis]]);
      EXPECT_NEAR(s[flat], std::exp(t[flat]) / denom, 1e-14);
      if (k == 0) {
        double total = 0.0;
        for (std::size_t j = 0; j < t.extent(axis); ++j) total += s[base + j * strides[axis]];
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const auto s = pcdal::softmax(Tensor({3}, {1000.0, 1000.0, -1000.0}), 0);
  EXPECT_NEAR(s[0], 0.5, 1e-15);
  EXPECT_EQ(s[2], 0.0);
}

TEST(Softmax, BadAxis) {
  EXPECT_THROW(pcdal::softmax(Tensor::zeros({2, 2}), 2), pcdal::InvalidArgument);
}

}  // namespace
