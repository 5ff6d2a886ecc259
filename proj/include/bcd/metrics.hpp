#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "bcd/autodiff.hpp"
#include "bcd/bitplane.hpp"
#include "bcd/ops.hpp"

namespace bcd {

/// Multi-scale structural similarity constants (unit dynamic range).
namespace msssim {
inline constexpr std::size_t kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;
inline constexpr std::array<double, 5> kWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
/// Lower bound applied to each per-scale term before exponentiation.
inline constexpr double kFloor = 1e-6;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps() {
  std::vector<double> taps(kWindow);
  double total = 0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = double(i) - double(kWindow / 2);
    taps[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

/// Largest scale count <= `wanted` whose coarsest level still fits the window.
inline std::size_t usable_scales(std::size_t height, std::size_t width, std::size_t wanted = kWeights.size()) {
  std::size_t scales = 0;
  for (std::size_t k = 1; k <= wanted; ++k)
    if (std::min(height, width) >= kWindow << (k - 1)) scales = k;
  return scales;
}

/// The standard weights; fewer scales take the first `scales` renormalized to sum to one.
inline std::vector<double> scale_weights(std::size_t scales) {
  std::vector<double> w(kWeights.begin(), kWeights.begin() + std::ptrdiff_t(scales));
  if (scales == kWeights.size()) return w;
  double total = 0;
  for (double v : w) total += v;
  for (auto& v : w) v /= total;
  return w;
}
}  // namespace msssim

template <class T>
struct MsSsim {
  Var<T> value;            ///< scalar, mean over batch and channels
  std::size_t scales = 0;  ///< scales actually used
  bool reduced = false;    ///< fewer than five scales fit the image
};

/// Differentiable MS-SSIM of two (n, c, H, W) images in [0, 1]. Per channel:
/// prod_{j<M} cs_j^{w_j} * ssim_M^{w_M}, each term floored at msssim::kFloor;
/// then averaged over batch and channels. Images too small for five scales use
/// as many as fit with renormalized weights.
template <class T>
MsSsim<T> ms_ssim(const Var<T>& a, const Var<T>& b, std::size_t max_scales = msssim::kWeights.size()) {
  require_same_shape(a.shape(), b.shape(), "ms_ssim");
  const std::size_t scales = msssim::usable_scales(a.shape().h, a.shape().w, max_scales);
  if (scales == 0)
    throw std::invalid_argument("ms_ssim: image " + to_string(a.shape()) + " smaller than the 11x11 window");
  const std::vector<double> weights = msssim::scale_weights(scales);
  std::vector<T> taps;
  for (double v : msssim::gaussian_taps()) taps.push_back(T(v));
  const T c1 = T(msssim::kC1), c2 = T(msssim::kC2);

  Var<T> x = a, y = b;
  Var<T> product;
  for (std::size_t j = 0; j < scales; ++j) {
    if (j > 0) {
      x = avg_pool2(x);
      y = avg_pool2(y);
    }
    const Var<T> mx = separable_filter_valid(x, taps);
    const Var<T> my = separable_filter_valid(y, taps);
    const Var<T> mxx = square(mx), myy = square(my), mxy = mx * my;
    const Var<T> sxx = separable_filter_valid(square(x), taps) - mxx;
    const Var<T> syy = separable_filter_valid(square(y), taps) - myy;
    const Var<T> sxy = separable_filter_valid(x * y, taps) - mxy;
    const Var<T> cs_map = add_scalar(scale(sxy, T(2)), c2) / add_scalar(sxx + syy, c2);
    Var<T> term;
    if (j + 1 < scales) {
      term = spatial_mean(cs_map);
    } else {
      const Var<T> l_map = add_scalar(scale(mxy, T(2)), c1) / add_scalar(mxx + myy, c1);
      term = spatial_mean(l_map * cs_map);
    }
    term = pow_scalar(clamp_min(term, T(msssim::kFloor)), T(weights[j]));
    product = j == 0 ? term : product * term;
  }
  return {mean(product), scales, scales < msssim::kWeights.size()};
}

/// Convenience evaluation on 8-bit images, in double precision.
inline double ms_ssim(const RgbImage& a, const RgbImage& b) {
  Tape<double> t;
  t.set_grad_enabled(false);
  auto to_tensor = [](const RgbImage& img) {
    Tensor<double> out(Shape{1, 3, img.height(), img.width()});
    for (std::size_t i = 0; i < img.pixels().size(); ++i) out[i] = img.pixels()[i] / 255.0;
    return out;
  };
  return ms_ssim(t.constant(to_tensor(a)), t.constant(to_tensor(b))).value.value()[0];
}

/// Mean absolute difference (the L1 distortion).
template <class T>
Var<T> l1_distortion(const Var<T>& a, const Var<T>& b) {
  return mean_abs_diff(a, b);
}

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / mse) on unit range, capped at 99 dB.
inline double psnr_from_mse(double mse) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const RgbImage& a, const RgbImage& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw std::invalid_argument("psnr: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) {
    const double d = (double(a.pixels()[i]) - double(b.pixels()[i])) / 255.0;
    acc += d * d;
  }
  return psnr_from_mse(acc / double(a.pixels().size()));
}

}  // namespace bcd
