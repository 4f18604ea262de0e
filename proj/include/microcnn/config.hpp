#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "microcnn/errors.hpp"
#include "microcnn/training.hpp"

namespace microcnn {

/// Everything a `train` run needs. Serialised as flat `key = value` lines;
/// `#` starts a comment.
///
///   data_root            dataset directory with two class folders (required)
///   output_dir           where checkpoint and CSVs go          (default "run")
///   checkpoint           checkpoint path       (default output_dir/checkpoint.mcn1)
///   epochs               50
///   batch_size           64
///   target_val_accuracy  0.95
///   learning_rate        0.001
///   seed                 42
///   split_ratios         0.8,0.1,0.1
///   dropout_rate         0.2
struct RunConfig {
  TrainConfig train;
  std::filesystem::path data_root;
  std::filesystem::path output_dir = "run";
  std::filesystem::path checkpoint;

  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? output_dir / "checkpoint.mcn1" : checkpoint;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

}  // namespace detail

/// Applies one key/value pair. Unknown keys are rejected.
inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "data_root") {
    cfg.data_root = value;
  } else if (key == "output_dir") {
    cfg.output_dir = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else if (key == "epochs") {
    cfg.train.epochs = parse_number<int>(key, value);
  } else if (key == "batch_size") {
    const long long v = parse_number<long long>(key, value);
    if (v < 1) throw ConfigError("batch_size must be >= 1");
    cfg.train.batch_size = static_cast<std::size_t>(v);
  } else if (key == "target_val_accuracy") {
    cfg.train.target_val_accuracy = parse_number<double>(key, value);
  } else if (key == "learning_rate") {
    cfg.train.learning_rate = parse_number<double>(key, value);
  } else if (key == "seed") {
    if (!value.empty() && value[0] == '-') throw ConfigError("seed must be non-negative");
    cfg.train.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "split_ratios") {
    std::istringstream in(value);
    std::string part;
    std::vector<double> parts;
    while (std::getline(in, part, ',')) parts.push_back(parse_number<double>(key, detail::trim(part)));
    if (parts.size() != 3) throw ConfigError("split_ratios needs three comma-separated values");
    const double sum = parts[0] + parts[1] + parts[2];
    if (parts[0] <= 0 || parts[1] <= 0 || parts[2] <= 0 || std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("split_ratios must be positive and sum to 1");
    cfg.train.split_ratios = {parts[0], parts[1], parts[2]};
  } else if (key == "dropout_rate") {
    cfg.train.dropout_rate = parse_number<float>(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// "key=value" as given on the command line.
inline void apply_config_assignment(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  apply_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig parse_config(const std::string& text, RunConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    try {
      apply_config_value(cfg, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace microcnn
