#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "senn/datasets.hpp"
#include "senn/expansion.hpp"
#include "senn/trainer.hpp"

namespace senn {

constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
  Eigen::Index n = 256;
  double noise = 0.05;
  double subset_fraction = 0.1;
  double validation_fraction = 0.1;
  std::string data_path;  // MNIST only; falls back to SENN_DATA_DIR
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string task = "regression_1d";  // regression_1d | half_moons | mnist | mnist_subset
  DatasetConfig dataset;
  std::vector<int> hidden;  // initial hidden sizes; empty starts without hidden layers
  TrainConfig train;
  ExpansionConfig expansion;
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
};

// Unknown keys and type errors throw Config with the offending line.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

Dataset make_dataset(const ExperimentConfig& config, std::uint64_t seed);
Network make_initial_network(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  Dataset data;
  Network initial;
  TrainResult result;
  Metrics train_metrics;
  Metrics validation_metrics;
  Metrics test_metrics;
};

// Trains one seed in memory; only snapshot files are written, if configured.
SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

nlohmann::json seed_summary(const SeedRun& run);

struct RunOverrides {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
};

// Writes seed_<n>/{train_log.csv, events.jsonl, snapshots/} and summary.json under the
// output directory. Returns 0 on success, 1 on an internal check failure, 2 on I/O or config errors.
int run_experiment(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                   std::ostream& err);

}  // namespace senn
