#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.
// The oracles are written directly from the defining formulas with plain
// loops in double precision and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bcd/bcd.hpp"

namespace testing_support {

using bcd::Parameter;
using bcd::RgbImage;
using bcd::Shape;
using bcd::Tensor;

inline std::filesystem::path fixture_dir() { return BCD_FIXTURE_DIR; }

inline std::vector<std::filesystem::path> fixture_image_paths() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(fixture_dir() / "images"))
    if (e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<RgbImage> fixture_images() {
  std::vector<RgbImage> out;
  for (const auto& p : fixture_image_paths()) out.push_back(bcd::read_ppm(p));
  return out;
}

inline RgbImage random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  RgbImage img(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : img.channel(c)) v = std::uint8_t(rng() & 0xFF);
  return img;
}

inline RgbImage crop_at(const RgbImage& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  RgbImage out(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

template <class T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = T(d(rng));
  return t;
}

inline Tensor<float> random_code(Shape s, std::mt19937_64& rng) {
  Tensor<float> t(s);
  for (auto& v : t.values()) v = (rng() >> 63) ? 1.0f : -1.0f;
  return t;
}

// ---------------------------------------------------------------------------
// Direct convolution: out[n][o][y][x] = b[o] + sum_{c,i,j} w[o][c][i][j] * x[n][c][y*s+i-p][x*s+j-p].
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                                   std::size_t stride, std::size_t pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t oh = (xs.h + 2 * pad - ws.h) / stride + 1, ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor<double> out(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t i = 0; i < ws.h; ++i)
              for (std::size_t j = 0; j < ws.w; ++j) {
                const long iy = long(y * stride + i) - long(pad), ix = long(xx * stride + j) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(xs.h) || ix >= long(xs.w)) continue;
                acc += w[((o * xs.c + c) * ws.h + i) * ws.w + j] * x[((n * xs.c + c) * xs.h + iy) * xs.w + ix];
              }
          out[((n * ws.n + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar gated-layer oracle: one channel in and out, 1x1 kernels, spatial
// positions independent except for the SE pooling.
inline double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double softplus(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

struct ScalarCell {
  double wx[4], wh[4], b[4];
};

/// One LSTM-style update: gates i, f, o and candidate from wx*x + wh*h + b.
inline void scalar_step(const ScalarCell& p, double x, double& h, double& c) {
  const double i = sigm(p.wx[0] * x + p.wh[0] * h + p.b[0]);
  const double f = sigm(p.wx[1] * x + p.wh[1] * h + p.b[1]);
  const double o = sigm(p.wx[2] * x + p.wh[2] * h + p.b[2]);
  const double g = std::tanh(p.wx[3] * x + p.wh[3] * h + p.b[3]);
  c = f * c + i * g;
  h = o * std::tanh(c);
}

/// Reference for a GatedLayer<double> built with in = out = 1 channel and
/// kernel 1. Inputs are per-branch (1, 1, H, W) planes. For an up layer, the
/// input-to-gate weight for output sub-pixel (a, b) of gate g is wx[4g + 2a + b].
inline std::vector<std::vector<double>> scalar_layer_oracle(bcd::GatedLayer<double>& layer,
                                                            const std::vector<std::vector<double>>& inputs,
                                                            std::size_t in_h, std::size_t in_w) {
  const bcd::LayerOptions& o = layer.options();
  const std::size_t n = layer.branches();
  const bool up = o.resample == bcd::Resample::up;
  // Stride 2 with a 1x1 kernel samples even positions.
  const std::size_t oh = up ? 2 * in_h : (in_h + 1) / 2, ow = up ? 2 * in_w : (in_w + 1) / 2;
  const std::size_t pix = oh * ow;

  auto cell = [&](bcd::Flow dir, std::size_t branch, std::size_t sub) {
    auto& g = layer.gates(dir, branch);
    ScalarCell c{};
    for (int k = 0; k < 4; ++k) {
      c.wx[k] = up ? g.wx.value[4 * std::size_t(k) + sub] : g.wx.value[std::size_t(k)];
      c.wh[k] = g.wh.value[std::size_t(k)];
      c.b[k] = g.bias.value[std::size_t(k)];
    }
    return c;
  };
  auto input_at = [&](std::size_t branch, std::size_t y, std::size_t x) {
    return up ? inputs[branch][(y / 2) * in_w + x / 2] : inputs[branch][(2 * y) * in_w + 2 * x];
  };
  auto sub_of = [&](std::size_t y, std::size_t x) { return up ? (y % 2) * 2 + (x % 2) : 0; };

  std::vector<std::vector<double>> hf(n, std::vector<double>(pix)), hb = hf;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      if (o.flow != bcd::Flow::up) {
        double h = 0, c = 0;
        for (std::size_t l = 0; l < n; ++l) {
          scalar_step(cell(bcd::Flow::down, l, sub_of(y, x)), input_at(l, y, x), h, c);
          hf[l][y * ow + x] = h;
        }
      }
      if (o.flow != bcd::Flow::down) {
        double h = 0, c = 0;
        for (std::size_t l = n; l-- > 0;) {
          scalar_step(cell(bcd::Flow::up, l, sub_of(y, x)), input_at(l, y, x), h, c);
          hb[l][y * ow + x] = h;
        }
      }
    }

  std::vector<std::vector<double>> out(n, std::vector<double>(pix));
  for (std::size_t l = 0; l < n; ++l) {
    std::vector<std::vector<double>> ys;
    if (o.flow != bcd::Flow::up) ys.push_back(hf[l]);
    if (o.flow != bcd::Flow::down) ys.push_back(hb[l]);
    const std::size_t k = ys.size();
    auto& fp = layer.fusion(l);
    std::vector<double> s(k, 1.0);
    if (o.se) {
      const std::size_t hidden = fp.se.reduce_b.value.size();
      std::vector<double> m(k, 0.0), r(hidden, 0.0);
      for (std::size_t ch = 0; ch < k; ++ch) {
        for (double v : ys[ch]) m[ch] += v;
        m[ch] /= double(pix);
      }
      for (std::size_t j = 0; j < hidden; ++j) {
        double a = fp.se.reduce_b.value[j];
        for (std::size_t ch = 0; ch < k; ++ch) a += fp.se.reduce_w.value[j * k + ch] * m[ch];
        r[j] = std::max(0.0, a);
      }
      for (std::size_t ch = 0; ch < k; ++ch) {
        double a = fp.se.expand_b.value[ch];
        for (std::size_t j = 0; j < hidden; ++j) a += fp.se.expand_w.value[ch * hidden + j] * r[j];
        s[ch] = sigm(a);
      }
    }
    for (std::size_t p = 0; p < pix; ++p) {
      double z = fp.conv_b.value[0];
      for (std::size_t ch = 0; ch < k; ++ch) z += fp.conv_w.value[ch] * s[ch] * ys[ch][p];
      if (o.norm == bcd::Norm::leaky_relu) {
        out[l][p] = z >= 0 ? z : bcd::kLeakyReluAlpha * z;
      } else {
        const double beta = softplus(fp.norm.beta_raw.value[0]) + bcd::kGdnBetaFloor;
        const double gamma = softplus(fp.norm.gamma_raw.value[0]);
        const double d = std::sqrt(beta + gamma * z * z);
        out[l][p] = up ? z * d : z / d;
      }
    }
  }
  return out;
}

inline bcd::LayerOptions scalar_options(bcd::Resample r, bcd::Flow flow, bool se, bcd::Norm norm) {
  bcd::LayerOptions o;
  o.resample = r;
  o.flow = flow;
  o.se = se;
  o.norm = norm;
  o.gate_kernel = 1;
  o.fuse_kernel = 1;
  o.se_ratio = flow == bcd::Flow::bidirectional ? 2 : 1;
  return o;
}

template <class T>
std::vector<bcd::Var<T>> scalar_inputs(bcd::Tape<T>& t, const std::vector<std::vector<double>>& v, std::size_t h,
                                       std::size_t w) {
  std::vector<bcd::Var<T>> out;
  for (const auto& b : v) {
    Tensor<T> x(bcd::Shape{1, 1, h, w});
    for (std::size_t i = 0; i < b.size(); ++i) x[i] = T(b[i]);
    out.push_back(t.constant(std::move(x)));
  }
  return out;
}

struct OracleErrors {
  double err64 = 0, err32 = 0;
};

/// Largest deviation of a one-channel, kernel-1 layer (double and float
/// twins, random parameters and inputs) from scalar_layer_oracle.
inline OracleErrors scalar_oracle_errors(std::size_t n, bcd::Resample r, bcd::Flow flow, bool se, bcd::Norm norm,
                                         std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 init(seed);
  const bcd::LayerOptions o = scalar_options(r, flow, se, norm);
  bcd::GatedLayer<double> layer("L", n, 1, 1, o, init);
  bcd::GatedLayer<float> layer32("L", n, 1, 1, o, init);
  std::mt19937_64 r64(seed + 1), r32(seed + 1);
  layer.for_each([&](Parameter<double>& p) { p.value = bcd::uniform_tensor<double>(p.value.shape(), 1.0, r64); });
  layer32.for_each([&](Parameter<float>& p) { p.value = bcd::uniform_tensor<float>(p.value.shape(), 1.0, r32); });

  std::mt19937_64 rng(seed + 2);
  std::vector<std::vector<double>> inputs(n, std::vector<double>(h * w));
  for (auto& b : inputs)
    for (auto& v : b) v = 2.0 * bcd::uniform01(rng) - 1.0;
  const auto want = scalar_layer_oracle(layer, inputs, h, w);

  bcd::Tape<double> t;
  const auto got = layer.apply(std::span<const bcd::Var<double>>(scalar_inputs(t, inputs, h, w)));
  bcd::Tape<float> t32;
  const auto got32 = layer32.apply(std::span<const bcd::Var<float>>(scalar_inputs(t32, inputs, h, w)));
  OracleErrors e;
  for (std::size_t l = 0; l < n; ++l) {
    if (got[l].value().size() != want[l].size()) return {1e300, 1e300};
    for (std::size_t i = 0; i < want[l].size(); ++i) {
      e.err64 = std::max(e.err64, std::abs(got[l].value()[i] - want[l][i]));
      e.err32 = std::max(e.err32, std::abs(double(got32[l].value()[i]) - want[l][i]));
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Direct MS-SSIM on one (H, W) plane pair in [0, 1]: full 2-D Gaussian window,
// valid region, 2x2 mean downsampling that drops an odd trailing row/column.
inline double direct_ms_ssim_plane(std::vector<double> a, std::vector<double> b, std::size_t h, std::size_t w) {
  const double weights_all[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::size_t scales = 0;
  for (std::size_t k = 1; k <= 5; ++k)
    if (std::min(h, w) >= (std::size_t(11) << (k - 1))) scales = k;
  double wsum = 0;
  for (std::size_t j = 0; j < scales; ++j) wsum += weights_all[j];
  if (scales == 5) wsum = 1.0;
  double win[11][11], tot = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) tot += win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  for (auto& row : win)
    for (double& v : row) v /= tot;
  const double c1 = 1e-4, c2 = 9e-4;
  double result = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    if (s > 0) {
      const std::size_t nh = h / 2, nw = w / 2;
      std::vector<double> da(nh * nw), db(nh * nw);
      for (std::size_t y = 0; y < nh; ++y)
        for (std::size_t x = 0; x < nw; ++x) {
          auto at = [&](const std::vector<double>& v, std::size_t yy, std::size_t xx) { return v[yy * w + xx]; };
          da[y * nw + x] = (at(a, 2 * y, 2 * x) + at(a, 2 * y + 1, 2 * x) + at(a, 2 * y, 2 * x + 1) +
                            at(a, 2 * y + 1, 2 * x + 1)) / 4;
          db[y * nw + x] = (at(b, 2 * y, 2 * x) + at(b, 2 * y + 1, 2 * x) + at(b, 2 * y, 2 * x + 1) +
                            at(b, 2 * y + 1, 2 * x + 1)) / 4;
        }
      a.swap(da);
      b.swap(db);
      h = nh;
      w = nw;
    }
    double cs_sum = 0, ssim_sum = 0;
    const std::size_t vh = h - 10, vw = w - 10;
    for (std::size_t y = 0; y < vh; ++y)
      for (std::size_t x = 0; x < vw; ++x) {
        double mx = 0, my = 0, xx2 = 0, yy2 = 0, xy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double g = win[i][j], va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
            mx += g * va;
            my += g * vb;
            xx2 += g * va * va;
            yy2 += g * vb * vb;
            xy += g * va * vb;
          }
        const double sx = xx2 - mx * mx, sy = yy2 - my * my, sxy = xy - mx * my;
        const double cs = (2 * sxy + c2) / (sx + sy + c2);
        cs_sum += cs;
        ssim_sum += cs * (2 * mx * my + c1) / (mx * mx + my * my + c1);
      }
    const double term = (s + 1 < scales ? cs_sum : ssim_sum) / double(vh * vw);
    result *= std::pow(std::max(term, 1e-6), weights_all[s] / wsum);
  }
  return result;
}

inline double direct_ms_ssim(const RgbImage& x, const RgbImage& y) {
  double acc = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> a, b;
    for (auto v : x.channel(c)) a.push_back(v / 255.0);
    for (auto v : y.channel(c)) b.push_back(v / 255.0);
    acc += direct_ms_ssim_plane(a, b, x.height(), x.width());
  }
  return acc / 3.0;
}

inline double read_number(const std::filesystem::path& p) {
  std::ifstream in(p);
  double v = 0;
  in >> v;
  return v;
}

// ---------------------------------------------------------------------------
// Gradient checking. A bundle is any type with for_each(f(Parameter<T>&))
// and `loss(bundle, tape)` builds a scalar on the tape. The analytic gradient
// comes from `analytic` (float or double); the central-difference reference is
// evaluated on the twin `reference` of value type TR (double, or long double
// where double roundoff swamps tiny gradients), whose parameters must hold the
// same values.
template <class TA, class TR = double, class Analytic, class Reference, class Loss>
bcd::GradCheck check_gradients(Analytic& analytic, Reference& reference, Loss loss, double rel_tol, double eps,
                               std::size_t max_coords_per_param, std::uint64_t seed = 5) {
  {
    analytic.for_each([](auto& p) { p.zero_grad(); });
    bcd::Tape<TA> t;
    auto l = loss(analytic, t);
    t.backward(l);
  }
  std::vector<Parameter<TA>*> ap;
  std::vector<Parameter<TR>*> rp;
  analytic.for_each([&](Parameter<TA>& p) { ap.push_back(&p); });
  reference.for_each([&](Parameter<TR>& p) { rp.push_back(&p); });
  auto eval = [&] {
    bcd::Tape<TR> t;
    t.set_grad_enabled(false);
    return loss(reference, t).value()[0];
  };
  std::mt19937_64 rng(seed);
  std::vector<double> a_sel, n_sel;
  for (std::size_t k = 0; k < ap.size(); ++k) {
    const std::size_t size = rp[k]->value.size();
    std::vector<std::size_t> coords(size);
    for (std::size_t i = 0; i < size; ++i) coords[i] = i;
    if (max_coords_per_param && size > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    for (std::size_t i : coords) {
      TR& v = rp[k]->value[i];
      const TR orig = v;
      v = orig + TR(eps);
      const TR up = eval();
      v = orig - TR(eps);
      const TR down = eval();
      v = orig;
      n_sel.push_back(double((up - down) / (2 * TR(eps))));
      a_sel.push_back(double(ap[k]->grad[i]));
    }
  }
  Tensor<double> a(Shape{1, 1, 1, a_sel.size()}), n(Shape{1, 1, 1, n_sel.size()});
  for (std::size_t i = 0; i < a_sel.size(); ++i) {
    a[i] = a_sel[i];
    n[i] = n_sel[i];
  }
  return bcd::compare_gradients(a, n, rel_tol);
}

/// A bag of parameters for gradient checks on free functions.
template <class T>
struct ParamBag {
  std::vector<Parameter<T>> params;

  Parameter<T>& operator[](std::size_t i) { return params[i]; }
  template <class F>
  void for_each(F&& f) {
    for (auto& p : params) f(p);
  }
};

/// Same values in float and double; the double copy is exact, the float copy rounded.
inline std::pair<ParamBag<float>, ParamBag<double>> twin_bags(const std::vector<Tensor<double>>& values) {
  ParamBag<float> f;
  ParamBag<double> d;
  for (std::size_t i = 0; i < values.size(); ++i) {
    f.params.emplace_back("p" + std::to_string(i), values[i].cast<float>());
    d.params.emplace_back("p" + std::to_string(i), values[i]);
  }
  return {std::move(f), std::move(d)};
}

/// Extended-precision copy of a bag, for finite-difference references.
inline ParamBag<long double> extended_bag(const std::vector<Tensor<double>>& values) {
  ParamBag<long double> e;
  for (std::size_t i = 0; i < values.size(); ++i)
    e.params.emplace_back("p" + std::to_string(i), values[i].cast<long double>());
  return e;
}

/// Fixed pseudo-random projection sum_i r_i x_i turning a tensor into a scalar loss.
template <class T>
bcd::Var<T> project(const bcd::Var<T>& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor<T> r(x.shape());
  for (auto& v : r.values()) v = T(2.0 * bcd::uniform01(rng) - 1.0);
  return bcd::sum(x * x.tape().constant(std::move(r)));
}

}  // namespace testing_support
