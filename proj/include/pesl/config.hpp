#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "pesl/attack.hpp"
#include "pesl/data.hpp"
#include "pesl/trainer.hpp"

namespace pesl {

enum class TransportKind { loopback, tcp };

struct TransportConfig {
  TransportKind kind = TransportKind::loopback;
  std::string endpoint;  // host:port, tcp only
};

struct DataConfig {
  bool synthetic = true;
  SyntheticTask task = SyntheticTask::plain;
  std::size_t n = 256;
  std::filesystem::path csv_path;
  /// Trailing fraction of the (seeded) data held out for evaluation.
  double test_fraction = 0.25;
};

/// Everything a CLI command needs. Relative paths are resolved against the
/// config file's directory.
struct RunConfig {
  TrainConfig train;
  TransportConfig transport;
  DataConfig data;
  AttackConfig attack;
  std::filesystem::path key_file;       // "key"
  std::filesystem::path weights_dir;    // "weights_dir": edge.bin, cloud.bin
  std::filesystem::path metrics_file;   // "metrics": JSON lines
};

/// Parses and validates. Every rejection is a ConfigError whose message starts
/// with the offending field path, e.g. "train.lr: must be positive".
RunConfig parse_run_config(const std::string& json_text,
                           const std::filesystem::path& base_dir = {});
/// IoError when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

/// Loads or generates the dataset and splits it into train and test parts.
struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};
Dataset load_dataset(const RunConfig& config);

}  // namespace pesl
