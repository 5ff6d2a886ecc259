#pragma once

// Scalable training objective and a small trainer.
//
// One step runs the encoder once, then the decoder once per quality level l
// (branches above l zero-filled exactly as at inference), sums
// beta(l) * D(X_hat(l), X) and back-propagates through everything, the
// binarizer included (straight-through).

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/autodiff.hpp"
#include "bcd/codec.hpp"
#include "bcd/metrics.hpp"
#include "bcd/ops.hpp"
#include "bcd/optimizer.hpp"

namespace bcd {

enum class Distortion { l1, ms_ssim };

inline std::string to_string(Distortion d) { return d == Distortion::l1 ? "l1" : "ms_ssim"; }

inline Distortion parse_distortion(const std::string& s) {
  if (s == "l1") return Distortion::l1;
  if (s == "ms_ssim") return Distortion::ms_ssim;
  throw std::invalid_argument("unknown distortion '" + s + "' (expected l1 or ms_ssim)");
}

/// Per-level loss coefficients; 1/N each unless tuned.
struct LossWeights {
  std::vector<double> beta;

  static LossWeights uniform(std::size_t levels) { return {std::vector<double>(levels, 1.0 / double(levels))}; }
};

/// D(x_hat, x): mean absolute error, or 1 - MS-SSIM.
template <class T>
Var<T> distortion(Distortion kind, const Var<T>& reconstruction, const Var<T>& target) {
  if (kind == Distortion::l1) return l1_distortion(reconstruction, target);
  return add_scalar(scale(ms_ssim(reconstruction, target).value, T(-1)), T(1));
}

template <class T>
struct ScalableLoss {
  Var<T> loss;
  std::vector<double> per_level;  ///< D(X_hat(l), X) for l = 1..N
  std::vector<typename CodecModel<T>::Quantized> codes;
};

/// Builds the full objective on `tape` for a batch of same-sized images.
template <class T>
ScalableLoss<T> scalable_loss(Tape<T>& tape, CodecModel<T>& model, std::span<const RgbImage> images,
                              const LossWeights& weights, Distortion kind, BinarizerMode mode,
                              std::mt19937_64* rng) {
  const std::size_t n = model.branches();
  if (weights.beta.size() != n)
    throw std::invalid_argument("scalable_loss: " + std::to_string(weights.beta.size()) + " loss weights for " +
                                std::to_string(n) + " levels");
  ScalableLoss<T> out;
  out.codes = model.encode_graph(tape, images, mode, rng);
  std::vector<Var<T>> codes;
  for (const auto& q : out.codes) codes.push_back(q.code);
  const Var<T> target = tape.constant(image_tensor<T>(images));
  std::vector<Var<T>> terms;
  for (std::size_t level = 1; level <= n; ++level) {
    const std::vector<Var<T>> ys = model.decode_graph(tape, std::span<const Var<T>>(codes), level);
    const Var<T> recon = add_n(std::span<const Var<T>>(ys));
    const Var<T> d = distortion(kind, recon, target);
    out.per_level.push_back(double(d.value()[0]));
    terms.push_back(scale(d, T(weights.beta[level - 1])));
  }
  out.loss = add_n(std::span<const Var<T>>(terms));
  return out;
}

struct TrainSchedule {
  std::size_t steps = 1000;
  std::size_t batch = 1;
  double learning_rate = 5e-5;
  double weight_decay = 0;
  std::uint64_t seed = 1;
  Distortion distortion = Distortion::l1;
  std::vector<double> beta;  ///< empty: 1/N each
  double flip_probability = 0;
};

struct TrainLogRow {
  std::size_t step = 0;
  std::size_t level = 0;
  double distortion = 0;
  double loss = 0;
  double bpp_estimate = 0;  ///< raw (pre-entropy-coding) bits per pixel at this level
};

inline void mirror_horizontally(RgbImage& img) {
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width() / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.width() - 1 - x));
}

/// Non-overlapping size x size tiles in raster order; partial tiles are dropped.
inline std::vector<RgbImage> tile_patches(const RgbImage& img, std::size_t size) {
  std::vector<RgbImage> out;
  for (std::size_t y0 = 0; y0 + size <= img.height(); y0 += size)
    for (std::size_t x0 = 0; x0 + size <= img.width(); x0 += size) {
      RgbImage p(size, size);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) p.at(c, y, x) = img.at(c, y0 + y, x0 + x);
      out.push_back(std::move(p));
    }
  return out;
}

/// Independent engines for initialization, data order and binarizer noise.
struct SeededStreams {
  std::uint64_t init_seed;
  std::mt19937_64 data;
  std::mt19937_64 noise;

  explicit SeededStreams(std::uint64_t seed) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0x42u};
    std::uint64_t words[3];
    std::vector<std::uint32_t> raw(6);
    seq.generate(raw.begin(), raw.end());
    for (int i = 0; i < 3; ++i) words[i] = (std::uint64_t(raw[2 * i]) << 32) | raw[2 * i + 1];
    init_seed = words[0];
    data.seed(words[1]);
    noise.seed(words[2]);
  }
};

/// Trains on a fixed patch set with Adam; `on_row` receives every log row as
/// it is produced. Deterministic for a given seed.
template <class T>
class Trainer {
 public:
  Trainer(const CodecConfig& config, const TrainSchedule& schedule)
      : schedule_(schedule), streams_(schedule.seed), model_(config, streams_.init_seed) {
    model_.for_each([&](Parameter<T>& p) { params_.push_back(&p); });
    adam_.options.learning_rate = schedule.learning_rate;
    adam_.options.weight_decay = schedule.weight_decay;
    weights_ = schedule.beta.empty() ? LossWeights::uniform(config.branches) : LossWeights{schedule.beta};
    if (weights_.beta.size() != config.branches)
      throw std::invalid_argument("Trainer: beta has " + std::to_string(weights_.beta.size()) + " entries, need " +
                                  std::to_string(config.branches));
  }

  CodecModel<T>& model() { return model_; }
  const LossWeights& weights() const { return weights_; }

  /// One optimization step on a sampled batch; returns the per-level log rows.
  std::vector<TrainLogRow> step(std::span<const RgbImage> patches) {
    if (patches.empty()) throw std::invalid_argument("train: empty dataset");
    std::vector<RgbImage> batch;
    for (std::size_t b = 0; b < schedule_.batch; ++b) {
      RgbImage img = patches[std::size_t(uniform01(streams_.data) * double(patches.size()))];
      if (schedule_.flip_probability > 0 && uniform01(streams_.data) < schedule_.flip_probability)
        mirror_horizontally(img);
      batch.push_back(std::move(img));
    }
    model_.zero_grad();
    Tape<T> tape;
    const ScalableLoss<T> l = scalable_loss(tape, model_, std::span<const RgbImage>(batch), weights_,
                                            schedule_.distortion, BinarizerMode::stochastic, &streams_.noise);
    tape.backward(l.loss);
    adam_step(std::span<Parameter<T>* const>(params_), adam_);
    ++steps_done_;
    std::vector<TrainLogRow> rows;
    const double raw = basic_bitrate(model_.config());
    for (std::size_t lv = 0; lv < l.per_level.size(); ++lv)
      rows.push_back({steps_done_, lv + 1, l.per_level[lv], double(l.loss.value()[0]), raw * double(lv + 1)});
    return rows;
  }

  std::vector<TrainLogRow> run(std::span<const RgbImage> patches,
                               const std::function<void(const TrainLogRow&)>& on_row = {}) {
    if (patches.empty()) throw std::invalid_argument("train: empty dataset");
    const std::size_t s = model_.config().spatial_factor();
    for (const auto& p : patches)
      if (p.height() % s != 0 || p.width() % s != 0 || p.height() != patches[0].height() ||
          p.width() != patches[0].width())
        throw std::invalid_argument("train: patches must share one size divisible by " + std::to_string(s));
    std::vector<TrainLogRow> log;
    for (std::size_t i = 0; i < schedule_.steps; ++i)
      for (const auto& row : step(patches)) {
        if (on_row) on_row(row);
        log.push_back(row);
      }
    return log;
  }

 private:
  TrainSchedule schedule_;
  SeededStreams streams_;
  CodecModel<T> model_;
  std::vector<Parameter<T>*> params_;
  AdamState<T> adam_;
  LossWeights weights_;
  std::size_t steps_done_ = 0;
};

/// Mean distortion per level of the deterministic codec over a patch set.
template <class T>
std::vector<double> evaluate_levels(CodecModel<T>& model, std::span<const RgbImage> patches, Distortion kind) {
  std::vector<double> mean(model.branches(), 0.0);
  for (const auto& p : patches) {
    const BranchCodes codes = encode(p, model);
    Tape<T> t;
    t.set_grad_enabled(false);
    const Var<T> target = t.constant(image_tensor<T>(std::span<const RgbImage>(&p, 1)));
    for (std::size_t l = 1; l <= model.branches(); ++l) {
      const LevelReconstruction r = decode(codes, model, l);
      const Var<T> recon = t.constant(r.image.template cast<T>());
      mean[l - 1] += double(distortion(kind, recon, target).value()[0]) / double(patches.size());
    }
  }
  return mean;
}

}  // namespace bcd
