#pragma once

// Flat key=value training configuration. '#' starts a comment; blank lines
// are ignored; lists are comma separated.
//
// Architecture keys: branches, widths, binary_channels, first_kernel,
// gate_kernel, fuse_kernel, se_ratio, encoder_flow (bi|down|up), decoder_flow,
// shared_gates (0|1), input (bitplanes|conv_slice), se (0|1),
// norm (gdn|leaky_relu).
// Schedule keys: steps, batch, learning_rate, weight_decay, seed,
// distortion (l1|ms_ssim), beta, flip_probability.
// Data keys: patch_size, max_patches.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/codec_config.hpp"
#include "bcd/training.hpp"

namespace bcd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataOptions {
  std::size_t patch_size = 32;
  std::size_t max_patches = 0;  ///< 0: every patch
};

struct TrainConfig {
  CodecConfig codec;
  TrainSchedule schedule;
  DataOptions data;
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof() || (std::is_unsigned_v<T> && v.find('-') != std::string::npos))
    throw ConfigError("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key);
}
}  // namespace detail

/// Applies one setting; returns false for an unknown key.
inline bool apply_setting(TrainConfig& cfg, const std::string& key, const std::string& v) {
  using detail::parse_number;
  CodecConfig& c = cfg.codec;
  TrainSchedule& s = cfg.schedule;
  const std::map<std::string, std::function<void()>> setters{
      {"branches", [&] { c.branches = parse_number<std::size_t>(key, v); }},
      {"widths",
       [&] {
         c.widths.clear();
         for (const auto& w : detail::split_list(v)) c.widths.push_back(parse_number<std::size_t>(key, w));
       }},
      {"binary_channels", [&] { c.binary_channels = parse_number<std::size_t>(key, v); }},
      {"first_kernel", [&] { c.first_kernel = parse_number<std::size_t>(key, v); }},
      {"gate_kernel", [&] { c.gate_kernel = parse_number<std::size_t>(key, v); }},
      {"fuse_kernel", [&] { c.fuse_kernel = parse_number<std::size_t>(key, v); }},
      {"se_ratio", [&] { c.se_ratio = parse_number<std::size_t>(key, v); }},
      {"encoder_flow", [&] { c.encoder_flow = parse_flow(v); }},
      {"decoder_flow", [&] { c.decoder_flow = parse_flow(v); }},
      {"shared_gates", [&] { c.shared_gates = detail::parse_flag(key, v); }},
      {"input", [&] { c.input = parse_input_mode(v); }},
      {"se", [&] { c.se = detail::parse_flag(key, v); }},
      {"norm", [&] { c.norm = parse_norm(v); }},
      {"steps", [&] { s.steps = parse_number<std::size_t>(key, v); }},
      {"batch", [&] { s.batch = parse_number<std::size_t>(key, v); }},
      {"learning_rate", [&] { s.learning_rate = parse_number<double>(key, v); }},
      {"weight_decay", [&] { s.weight_decay = parse_number<double>(key, v); }},
      {"seed", [&] { s.seed = parse_number<std::uint64_t>(key, v); }},
      {"distortion", [&] { s.distortion = parse_distortion(v); }},
      {"beta",
       [&] {
         s.beta.clear();
         for (const auto& b : detail::split_list(v)) s.beta.push_back(parse_number<double>(key, b));
       }},
      {"flip_probability", [&] { s.flip_probability = parse_number<double>(key, v); }},
      {"patch_size", [&] { cfg.data.patch_size = parse_number<std::size_t>(key, v); }},
      {"max_patches", [&] { cfg.data.max_patches = parse_number<std::size_t>(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) return false;
  try {
    it->second();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return true;
}

/// Throws ConfigError listing every unknown key, or the first malformed line or value.
inline TrainConfig parse_train_config(std::istream& in) {
  TrainConfig cfg;
  std::vector<std::string> unknown;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!apply_setting(cfg, key, detail::trim(line.substr(eq + 1)))) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + list);
  }
  return cfg;
}

inline void validate(const TrainConfig& cfg) {
  try {
    cfg.codec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.schedule.batch == 0) throw ConfigError("config: batch must be positive");
  if (!cfg.schedule.beta.empty()) {
    if (cfg.schedule.beta.size() != cfg.codec.branches)
      throw ConfigError("config: beta needs " + std::to_string(cfg.codec.branches) + " entries");
    if (std::any_of(cfg.schedule.beta.begin(), cfg.schedule.beta.end(), [](double b) { return !(b >= 0); }))
      throw ConfigError("config: beta entries must be non-negative");
  }
  if (cfg.data.patch_size == 0 || cfg.data.patch_size % cfg.codec.spatial_factor() != 0)
    throw ConfigError("config: patch_size must be a positive multiple of " +
                      std::to_string(cfg.codec.spatial_factor()));
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  TrainConfig cfg = parse_train_config(in);
  validate(cfg);
  return cfg;
}

}  // namespace bcd
