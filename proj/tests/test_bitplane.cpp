#include <gtest/gtest.h>

#include <bitset>
#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace bcd;
using namespace testing_support;

TEST(Decompose, EveryValueMatchesBinaryExpansion) {
  RgbImage img(1, 256);
  for (std::size_t v = 0; v < 256; ++v) img.at(1, 0, v) = std::uint8_t(v);
  const BitPlaneStack s = decompose(img);
  for (std::size_t v = 0; v < 256; ++v) {
    const std::bitset<8> bits(v);
    for (std::size_t l = 1; l <= 8; ++l) EXPECT_EQ(s.plane(1, l)[v], bits[8 - l]) << "v=" << v << " l=" << l;
  }
}

TEST(Decompose, Value137SetsPlanesOneFiveEight) {
  RgbImage img(1, 1);
  img.at(0, 0, 0) = 137;
  const BitPlaneStack s = decompose(img);
  for (std::size_t l = 1; l <= 8; ++l) EXPECT_EQ(s.plane(0, l)[0], (l == 1 || l == 5 || l == 8) ? 1 : 0);
}

TEST(Reconstruct, SinglePlanesGivePowersOfTwo) {
  BitPlaneStack s(1, 1);
  EXPECT_EQ(reconstruct(s).at(2, 0, 0), 0);
  s.plane(2, 1)[0] = 1;
  EXPECT_EQ(reconstruct(s).at(2, 0, 0), 128);
  s.plane(2, 5)[0] = 1;
  s.plane(2, 8)[0] = 1;
  EXPECT_EQ(reconstruct(s).at(2, 0, 0), 137);
}

TEST(Reconstruct, RejectsNonBinaryPlane) {
  BitPlaneStack s(2, 2);
  s.plane(0, 3)[1] = 2;
  EXPECT_THROW(reconstruct(s), std::invalid_argument);
}

TEST(Reconstruct, FlippingPlaneChangesPixelByItsWeight) {
  std::mt19937_64 rng(1);
  const RgbImage img = random_image(4, 4, rng);
  for (std::size_t l = 1; l <= 8; ++l) {
    BitPlaneStack s = decompose(img);
    s.plane(1, l)[5] ^= 1;
    const int delta = int(reconstruct(s).at(1, 1, 1)) - int(img.at(1, 1, 1));
    EXPECT_EQ(std::abs(delta), 1 << (8 - l));
  }
}

TEST(Roundtrip, RandomAndFixtureImages) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const RgbImage img = random_image(1 + rng() % 24, 1 + rng() % 24, rng);
    ASSERT_EQ(reconstruct(decompose(img)), img);
  }
  for (const auto& img : fixture_images()) EXPECT_EQ(reconstruct(decompose(img)), img);
}

TEST(Entropy, PlaneEntropyValues) {
  std::vector<std::uint8_t> p(8, 0);
  EXPECT_EQ(plane_entropy(p), 0.0);
  for (int i = 0; i < 4; ++i) p[std::size_t(i)] = 1;
  EXPECT_DOUBLE_EQ(plane_entropy(p), 1.0);
  p.assign(8, 0);
  p[0] = p[1] = 1;
  EXPECT_NEAR(plane_entropy(p), 0.811278124459, 1e-12);
  p[0] = 3;
  EXPECT_THROW(plane_entropy(p), std::invalid_argument);
}

TEST(Entropy, ImageEntropyValues) {
  EXPECT_EQ(image_entropy(RgbImage(5, 7, 42)), 0.0);
  RgbImage two(2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    two.at(c, 0, 0) = two.at(c, 0, 1) = 10;
    two.at(c, 1, 0) = two.at(c, 1, 1) = 200;
  }
  EXPECT_DOUBLE_EQ(image_entropy(two), 1.0);
  std::mt19937_64 rng(3);
  EXPECT_NEAR(image_entropy(random_image(256, 256, rng)), 8.0, 0.05);
}

TEST(Entropy, RandomPlanesAreNearOneBit) {
  std::mt19937_64 rng(4);
  const BitPlaneStack s = decompose(random_image(128, 128, rng));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t l = 1; l <= 8; ++l) EXPECT_NEAR(plane_entropy(s.plane(c, l)), 1.0, 1e-3);
}

TEST(Entropy, PlaneSumBoundsChannelEntropyOnNaturalImages) {
  const auto images = fixture_images();
  ASSERT_GE(images.size(), 5u);
  for (const auto& img : images) {
    const BitPlaneStack s = decompose(img);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0;
      for (std::size_t l = 1; l <= 8; ++l) sum += plane_entropy(s.plane(c, l));
      EXPECT_GE(sum, channel_entropy(img.channel(c)));
    }
  }
}

TEST(ImageIo, PpmRoundtripAndComments) {
  std::mt19937_64 rng(5);
  const RgbImage img = random_image(3, 5, rng);
  std::stringstream ss;
  write_ppm(ss, img);
  EXPECT_EQ(read_ppm(ss), img);
  std::stringstream commented("P6\n# made by hand\n1 1\n255\nabc");
  const RgbImage one = read_ppm(commented);
  EXPECT_EQ(one.at(0, 0, 0), 'a');
  EXPECT_EQ(one.at(2, 0, 0), 'c');
  std::stringstream bad("P3\n1 1\n255\n1 2 3");
  EXPECT_THROW(read_ppm(bad), ImageIoError);
  std::stringstream short_data("P6\n2 2\n255\nabc");
  EXPECT_THROW(read_ppm(short_data), ImageIoError);
}

TEST(RgbImage, RejectsEmptyDimensions) { EXPECT_THROW(RgbImage(0, 3), std::invalid_argument); }
