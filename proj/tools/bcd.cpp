// bcd: command-line front end for the bit-plane codec.
//
// Exit codes: 0 success, 2 usage / config / missing file, 3 data or contract
// error (corrupt input, level unavailable, model mismatch).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcd/bcd.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

std::vector<fs::path> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("dataset directory not found: " + dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

bcd::CodecModel<float> open_model(const std::string& path) {
  require_file(path, "model file");
  return bcd::load_model<float>(path);
}

bcd::RgbImage open_image(const std::string& path) {
  require_file(path, "image");
  return bcd::read_ppm(path);
}

int cmd_encode(const std::string& input, const std::string& model_path, const std::string& output,
               const std::optional<std::string>& mask_text) {
  auto model = open_model(model_path);
  const bcd::RgbImage image = open_image(input);
  std::vector<bool> mask(model.branches(), true);
  if (mask_text) {
    try {
      mask = bcd::parse_switch_mask(*mask_text, model.branches());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const std::vector<std::uint8_t> bytes = bcd::compress(image, model, mask);
  bcd::write_file_bytes(output, bytes);
  const bcd::Container c = bcd::parse_container(bytes);
  std::cout << "wrote " << output << " (" << bytes.size() << " bytes, header "
            << bcd::container_header_size(c.info.branches) << ")\n";
  for (std::size_t l = 1; l <= c.info.branches; ++l)
    std::cout << "level " << l << ": " << std::setprecision(6) << bcd::measured_bpp(c, l) << " bpp\n";
  return kExitOk;
}

int cmd_decode(const std::string& input, const std::string& model_path, const std::string& output,
               std::optional<std::size_t> level, bool all_levels) {
  if (!level && !all_levels) throw UsageError("decode: give --level or --all-levels");
  require_file(input, "container");
  auto model = open_model(model_path);
  const bcd::Container c = bcd::parse_container(bcd::read_file_bytes(input));
  if (all_levels) {
    const fs::path out(output);
    for (std::size_t l = 1; l <= c.info.branches; ++l) {
      const fs::path p = out.parent_path() / (out.stem().string() + "_L" + std::to_string(l) + out.extension().string());
      bcd::write_ppm(p, bcd::decompress(c, model, l));
      std::cout << "wrote " << p.string() << "\n";
    }
  } else {
    bcd::write_ppm(output, bcd::decompress(c, model, *level));
    std::cout << "wrote " << output << "\n";
  }
  return kExitOk;
}

int cmd_truncate(const std::string& input, std::size_t level, const std::string& output) {
  require_file(input, "container");
  const auto bytes = bcd::truncate_to_level(bcd::read_file_bytes(input), level);
  bcd::write_file_bytes(output, bytes);
  std::cout << "wrote " << output << " (" << bytes.size() << " bytes)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& output,
              std::optional<std::string> log_path, std::optional<std::size_t> steps,
              std::optional<std::uint64_t> seed) {
  require_file(config_path, "config file");
  bcd::TrainConfig cfg;
  try {
    cfg = bcd::load_train_config(config_path);
  } catch (const bcd::ConfigError& e) {
    throw UsageError(e.what());
  }
  if (const char* env = std::getenv("BCD_SEED")) {
    try {
      cfg.schedule.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("BCD_SEED is not an unsigned integer: ") + env);
    }
  }
  if (seed) cfg.schedule.seed = *seed;
  if (steps) cfg.schedule.steps = *steps;

  std::vector<bcd::RgbImage> patches;
  for (const auto& p : list_images(data_dir)) {
    for (auto& tile : bcd::tile_patches(bcd::read_ppm(p), cfg.data.patch_size)) {
      if (cfg.data.max_patches && patches.size() == cfg.data.max_patches) break;
      patches.push_back(std::move(tile));
    }
  }
  if (patches.empty())
    throw DataError("no " + std::to_string(cfg.data.patch_size) + "x" + std::to_string(cfg.data.patch_size) +
                    " patches found in " + data_dir);

  const std::string log_file = log_path.value_or(output + ".log.csv");
  std::ofstream log(log_file);
  if (!log) throw UsageError("cannot write log " + log_file);
  log << "step,level,distortion,loss,bpp_estimate\n" << std::setprecision(9);
  bcd::Trainer<float> trainer(cfg.codec, cfg.schedule);
  std::cout << "training " << trainer.model().parameter_count() << " parameters on " << patches.size()
            << " patches for " << cfg.schedule.steps << " steps (seed " << cfg.schedule.seed << ")\n";
  trainer.run(patches, [&](const bcd::TrainLogRow& r) {
    log << r.step << ',' << r.level << ',' << r.distortion << ',' << r.loss << ',' << r.bpp_estimate << '\n';
    if (r.level == cfg.codec.branches && (r.step % 100 == 0 || r.step == cfg.schedule.steps))
      std::cout << "step " << r.step << " loss " << r.loss << " level-" << r.level << " distortion " << r.distortion
                << "\n";
  });
  bcd::save_model(trainer.model(), output);
  std::cout << "wrote " << output << " and " << log_file << "\n";
  return kExitOk;
}

int cmd_analyze(const std::string& input) {
  const bcd::RgbImage image = open_image(input);
  const bcd::BitPlaneStack planes = bcd::decompose(image);
  static const char* names[] = {"R", "G", "B"};
  bool all_hold = true;
  std::cout << std::fixed << std::setprecision(6);
  for (std::size_t c = 0; c < bcd::RgbImage::channels; ++c) {
    double sum = 0;
    std::cout << "channel " << names[c] << "\n";
    for (std::size_t l = 1; l <= planes.depth(); ++l) {
      const double h = bcd::plane_entropy(planes.plane(c, l));
      sum += h;
      std::cout << "  plane " << l << " entropy " << h << "\n";
    }
    const double h_img = bcd::channel_entropy(image.channel(c));
    const bool holds = sum >= h_img;
    all_hold = all_hold && holds;
    std::cout << "  plane sum " << sum << "\n  image entropy " << h_img << "\n  sum >= image entropy: "
              << (holds ? "true" : "false") << "\n";
  }
  std::cout << "all channels: " << (all_hold ? "true" : "false") << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& model_path, std::optional<std::string> output) {
  auto model = open_model(model_path);
  std::vector<std::string> rows;
  bool failed = false;
  for (const auto& p : list_images(data_dir)) {
    try {
      const bcd::RgbImage image = bcd::read_ppm(p);
      const bcd::Container c = bcd::parse_container(bcd::compress(image, model));
      for (std::size_t l = 1; l <= c.info.branches; ++l) {
        const bcd::RgbImage rec = bcd::decompress(c, model, l);
        std::ostringstream row;
        row << std::setprecision(9) << p.filename().string() << ',' << l << ',' << bcd::measured_bpp(c, l) << ','
            << bcd::psnr(rec, image) << ',' << bcd::ms_ssim(rec, image);
        rows.push_back(row.str());
      }
    } catch (const std::exception& e) {
      std::cerr << "bcd eval: " << p.string() << ": " << e.what() << "\n";
      failed = true;
    }
  }
  std::ofstream file;
  if (output) {
    file.open(*output);
    if (!file) throw UsageError("cannot write " + *output);
  }
  std::ostream& out = output ? file : std::cout;
  out << "image,level,bpp,psnr,ms_ssim\n";
  for (const auto& r : rows) out << r << "\n";
  return failed ? kExitData : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-plane decomposition image codec"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::string input, model, output, config, data;
  std::optional<std::string> mask, log_path;
  std::optional<std::size_t> level, steps;
  std::optional<std::uint64_t> seed;
  bool all_levels = false;

  auto* enc = app.add_subcommand("encode", "Compress a PPM image into a .bcd container");
  enc->add_option("-i,--input", input, "input image (binary PPM)")->required();
  enc->add_option("-m,--model", model, "model checkpoint")->required();
  enc->add_option("-o,--output", output, "output .bcd file")->required();
  enc->add_option("--mask", mask, "switch mask, one 0/1 per branch (default all on)");

  auto* dec = app.add_subcommand("decode", "Reconstruct an image from a .bcd container");
  dec->add_option("-i,--input", input, "input .bcd file")->required();
  dec->add_option("-m,--model", model, "model checkpoint")->required();
  dec->add_option("-o,--output", output, "output PPM (with --all-levels: name_L<l>.ppm per level)")->required();
  auto* level_opt = dec->add_option("-l,--level", level, "quality level 1..N")->check(CLI::PositiveNumber);
  dec->add_flag("--all-levels", all_levels, "write every level")->excludes(level_opt);

  auto* trunc = app.add_subcommand("truncate", "Drop the segments above a level");
  trunc->add_option("-i,--input", input, "input .bcd file")->required();
  trunc->add_option("-l,--level", level, "highest level to keep")->required()->check(CLI::PositiveNumber);
  trunc->add_option("-o,--output", output, "output .bcd file")->required();

  auto* train = app.add_subcommand("train", "Train a model on the PPM tiles of a directory");
  train->add_option("-c,--config", config, "key=value config file")->required();
  train->add_option("-d,--data", data, "directory of PPM images")->required();
  train->add_option("-o,--output", output, "output model checkpoint")->required();
  train->add_option("--log", log_path, "loss log CSV (default <output>.log.csv)");
  train->add_option("--steps", steps, "override the configured step count");
  train->add_option("--seed", seed, "override the seed (beats BCD_SEED and the config)");

  auto* analyze = app.add_subcommand("analyze-bitplanes", "Per-plane and per-channel entropies of an image");
  analyze->add_option("-i,--input", input, "input image (binary PPM)")->required();

  auto* eval = app.add_subcommand("eval", "Rate-distortion CSV over a directory of PPM images");
  eval->add_option("-d,--data", data, "directory of PPM images")->required();
  eval->add_option("-m,--model", model, "model checkpoint")->required();
  eval->add_option("-o,--output", output, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*enc) return cmd_encode(input, model, output, mask);
    if (*dec) return cmd_decode(input, model, output, level, all_levels);
    if (*trunc) return cmd_truncate(input, *level, output);
    if (*train) return cmd_train(config, data, output, log_path, steps, seed);
    if (*analyze) return cmd_analyze(input);
    if (*eval) return cmd_eval(data, model, output.empty() ? std::nullopt : std::optional<std::string>(output));
  } catch (const UsageError& e) {
    std::cerr << "bcd: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "bcd: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
