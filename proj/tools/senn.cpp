// senn: run experiments, verification suites, and inspect snapshots.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "senn/error.hpp"
#include "senn/experiment.hpp"
#include "senn/expansion.hpp"
#include "senn/serialize.hpp"
#include "senn/verification.hpp"

namespace {

int inspect(const std::string& snapshot, const std::string& config_path, std::uint64_t seed) {
  using namespace senn;
  const Network net = load_snapshot(snapshot);
  std::cout << "input_dim " << net.input_dim << "\n";
  for (int l = 0; l < net.n_layers(); ++l) {
    const DenseLayer& layer = net.layers[l];
    std::cout << "layer " << l << ": " << layer.in_dim() << " -> " << layer.out_dim()
              << (layer.is_output ? " (output)" : " (rational)") << "\n";
  }
  std::cout << "parameters " << parameter_count(net) << "\n";
  if (config_path.empty()) return 0;
  const ExperimentConfig config = load_experiment_config(config_path);
  const Dataset data = make_dataset(config, seed);
  std::vector<Eigen::Index> idx = data.train;
  const std::size_t batch = config.train.batch_size > 0 ? static_cast<std::size_t>(config.train.batch_size) : idx.size();
  idx.resize(std::min(idx.size(), batch));
  const Matrix x = rows_of(data.inputs, idx);
  const Matrix t = rows_of(data.targets, idx);
  const BatchAnalysis ba = analyze_batch(net, x, t, data.task, config.train.damping, CurvatureMode::kfac_moments, nullptr);
  std::printf("loss %.6g  lambda %.6g  activation_eta %.6g\n", ba.loss, ba.lambda, ba.activation_eta);
  for (std::size_t l = 0; l < ba.layer_eta.size(); ++l) std::printf("eta[%zu] %.6g\n", l, ba.layer_eta[l]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-expanding MLPs with natural-gradient growth"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "train every seed of an experiment config");
  run->add_option("config_pos", config_path, "config path")->check(CLI::ExistingFile);
  run->add_option("--config", config_path, "config path")->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory (overrides the config)");
  run->add_option("--seed", seed, "run only this seed");

  std::string suite = "all";
  senn::SuiteOptions options;
  auto* verify = app.add_subcommand("verify", "run property suites");
  verify->add_option("suite_pos", suite, "linalg | surgery | curvature | theorems | all");
  verify->add_option("--suite", suite, "linalg | surgery | curvature | theorems | all");
  verify->add_option("--seed", options.seed, "base seed");
  verify->add_option("--ubah-samples", options.ubah_samples, "draws per UBAH fixture");

  std::string snapshot;
  std::uint64_t inspect_seed = 0;
  std::string inspect_config;
  auto* insp = app.add_subcommand("inspect", "print a snapshot's architecture and per-layer eta");
  insp->add_option("snapshot", snapshot, "snapshot JSON")->required()->check(CLI::ExistingFile);
  insp->add_option("--config", inspect_config, "experiment config supplying the batch for eta");
  insp->add_option("--seed", inspect_seed, "dataset seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      if (config_path.empty()) {
        std::cerr << "run needs a config path\n";
        return 2;
      }
      senn::RunOverrides ov;
      if (!out_dir.empty()) ov.output_dir = out_dir;
      ov.seed = seed;
      return senn::run_experiment(config_path, ov, std::cout, std::cerr);
    }
    if (*verify) return senn::run_verification(suite, options, std::cout);
    if (*insp) return inspect(snapshot, inspect_config, inspect_seed);
  } catch (const senn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
