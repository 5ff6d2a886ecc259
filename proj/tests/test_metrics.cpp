#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace bcd;
using namespace testing_support;

namespace {

RgbImage constant_image(std::size_t h, std::size_t w, std::uint8_t v) {
  RgbImage img(h, w);
  for (auto& p : img.pixels()) p = v;
  return img;
}

RgbImage noisy_copy(const RgbImage& img, int amplitude, std::mt19937_64& rng) {
  RgbImage out = img;
  std::uniform_int_distribution<int> d(-amplitude, amplitude);
  for (auto& p : out.pixels()) p = std::uint8_t(std::clamp(int(p) + d(rng), 0, 255));
  return out;
}

}  // namespace

TEST(MsSsim, IdenticalImagesGiveExactlyOne) {
  std::mt19937_64 rng(1);
  for (std::size_t side : {16u, 40u, 128u, 200u}) {
    const RgbImage img = random_image(side, side + 3, rng);
    EXPECT_EQ(ms_ssim(img, img), 1.0) << side;
  }
  for (const auto& img : fixture_images()) EXPECT_EQ(ms_ssim(img, img), 1.0);
}

TEST(MsSsim, BlackVersusWhite) {
  // Up to three scales the luminance term dominates: well below 0.05.
  EXPECT_LT(ms_ssim(constant_image(32, 32, 0), constant_image(32, 32, 255)), 0.05);
  EXPECT_LT(ms_ssim(constant_image(64, 64, 0), constant_image(64, 64, 255)), 0.05);
  // With all five scales only the coarsest luminance term differs from one:
  // (C1 / (1 + C1))^0.1333.
  const double five = ms_ssim(constant_image(176, 176, 0), constant_image(176, 176, 255));
  EXPECT_NEAR(five, std::pow(1e-4 / (1 + 1e-4), 0.1333), 1e-9);
}

TEST(MsSsim, MatchesFrozenReferenceOnFixturePair) {
  const RgbImage a = read_ppm((fixture_dir() / "msssim" / "reference.ppm").string());
  const RgbImage b = read_ppm((fixture_dir() / "msssim" / "distorted.ppm").string());
  const double want = read_number(fixture_dir() / "msssim" / "tf_ms_ssim.txt");
  ASSERT_GT(want, 0.5);
  EXPECT_NEAR(ms_ssim(a, b), want, 1e-4);
  EXPECT_NEAR(direct_ms_ssim(a, b), want, 1e-4);
}

TEST(MsSsim, MatchesDirectOracle) {
  std::mt19937_64 rng(2);
  const auto images = fixture_images();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const RgbImage noisy = noisy_copy(images[i], 20, rng);
    EXPECT_NEAR(ms_ssim(images[i], noisy), direct_ms_ssim(images[i], noisy), 1e-9);
    EXPECT_NEAR(ms_ssim(images[i], images[(i + 1) % images.size()]),
                direct_ms_ssim(images[i], images[(i + 1) % images.size()]), 1e-9);
  }
  for (std::size_t side : {11u, 23u, 47u, 95u}) {
    const RgbImage a = random_image(side, side + 5, rng);
    const RgbImage b = noisy_copy(a, 40, rng);
    EXPECT_NEAR(ms_ssim(a, b), direct_ms_ssim(a, b), 1e-9) << side;
  }
}

TEST(MsSsim, Symmetric) {
  std::mt19937_64 rng(3);
  const auto images = fixture_images();
  for (std::size_t i = 0; i + 1 < images.size(); ++i)
    EXPECT_NEAR(ms_ssim(images[i], images[i + 1]), ms_ssim(images[i + 1], images[i]), 1e-7);
  const RgbImage a = random_image(64, 64, rng), b = noisy_copy(a, 30, rng);
  EXPECT_NEAR(ms_ssim(a, b), ms_ssim(b, a), 1e-7);
}

TEST(MsSsim, ReducedScalesReported) {
  EXPECT_EQ(msssim::usable_scales(176, 176), 5u);
  EXPECT_EQ(msssim::usable_scales(175, 300), 4u);
  EXPECT_EQ(msssim::usable_scales(32, 32), 2u);
  EXPECT_EQ(msssim::usable_scales(10, 32), 0u);
  const auto w = msssim::scale_weights(2);
  EXPECT_NEAR(w[0] + w[1], 1.0, 1e-15);
  EXPECT_NEAR(w[1] / w[0], 0.2856 / 0.0448, 1e-12);

  std::mt19937_64 rng(4);
  Tape<double> t;
  auto small = t.constant(random_tensor<double>(Shape{1, 3, 32, 32}, rng, 0, 1));
  const auto r = ms_ssim(small, small);
  EXPECT_EQ(r.scales, 2u);
  EXPECT_TRUE(r.reduced);
  auto big = t.constant(random_tensor<double>(Shape{1, 1, 176, 180}, rng, 0, 1));
  const auto full = ms_ssim(big, big);
  EXPECT_EQ(full.scales, 5u);
  EXPECT_FALSE(full.reduced);
  auto tiny = t.constant(Tensor<double>(Shape{1, 3, 10, 40}));
  EXPECT_THROW(ms_ssim(tiny, tiny), std::invalid_argument);
  EXPECT_THROW(ms_ssim(small, big), ShapeError);
}

TEST(MsSsim, GradientCheck) {
  std::mt19937_64 rng(5);
  Tensor<double> a = random_tensor<double>(Shape{2, 2, 24, 26}, rng, 0.1, 0.9);
  Tensor<double> b = a;
  for (auto& v : b.values()) v = std::clamp(v + 0.2 * (uniform01(rng) - 0.5), 0.0, 1.0);
  auto [f, d] = twin_bags({a, b});
  auto loss = [](auto& bag, auto& t) { return ms_ssim(t.param(bag[0]), t.param(bag[1])).value; };
  const GradCheck g32 = check_gradients<float>(f, d, loss, 1e-3, 1e-4, 150);
  EXPECT_TRUE(g32.passes()) << g32.fraction_ok() << " " << g32.max_abs_err;
  auto e = extended_bag({a, b});
  const GradCheck g64 = check_gradients<double, long double>(d, e, loss, 1e-6, 1e-5, 150);
  EXPECT_TRUE(g64.passes()) << g64.fraction_ok() << " " << g64.worst_rel_err;
}

TEST(Psnr, FormulaAndCap) {
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
  EXPECT_NEAR(psnr_from_mse(1e-4), 40.0, 1e-12);
  EXPECT_EQ(psnr_from_mse(0.0), 99.0);
  EXPECT_EQ(psnr_from_mse(1e-12), 99.0);
  std::mt19937_64 rng(6);
  const RgbImage img = random_image(16, 16, rng);
  EXPECT_EQ(psnr(img, img), 99.0);
  const RgbImage black = constant_image(8, 8, 0), grey = constant_image(8, 8, 51);
  EXPECT_NEAR(psnr(black, grey), 10 * std::log10(1 / 0.04), 1e-12);
  EXPECT_THROW(psnr(black, constant_image(8, 9, 0)), std::invalid_argument);
}

TEST(L1, Values) {
  std::mt19937_64 rng(7);
  Tape<double> t;
  const auto av = random_tensor<double>(Shape{2, 3, 5, 4}, rng);
  auto bv = av;
  for (auto& v : bv.values()) v += 0.5;
  auto a = t.constant(av), b = t.constant(bv);
  EXPECT_EQ(l1_distortion(a, a).value()[0], 0.0);
  EXPECT_NEAR(l1_distortion(a, b).value()[0], 0.5, 1e-15);
  const auto cv = random_tensor<double>(av.shape(), rng);
  double direct = 0;
  for (std::size_t i = 0; i < av.size(); ++i) direct += std::abs(av[i] - cv[i]);
  EXPECT_NEAR(l1_distortion(a, t.constant(cv)).value()[0], direct / double(av.size()), 1e-14);
  EXPECT_THROW(l1_distortion(a, t.constant(Tensor<double>(Shape{2, 3, 5, 5}))), ShapeError);
}
