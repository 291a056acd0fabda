#pragma once

#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "senn/curvature.hpp"
#include "senn/datasets.hpp"
#include "senn/expansion.hpp"
#include "senn/network.hpp"
#include "senn/pruning.hpp"

namespace senn {

struct TrainConfig {
  double learning_rate = 0.1;
  double damping = 0.1;
  int cg_max_iters = 100;
  double cg_rel_tol = 1e-6;
  double weight_decay = 0.0;  // decoupled, weights and biases only
  int batch_size = 0;         // 0 trains full-batch
  int total_steps = 1000;
  bool expansion_enabled = true;
  int expand_every = 30;
  int depth_cooldown = 90;
  int prune_every = 0;  // 0 disables pruning
  PruneConfig prune;
  int kfac_every = 1;   // tracked curvature refresh period, in steps
  double kfac_ema = 0.95;
  double kfac_drift_threshold = 0.01;
  int eval_every = 0;   // 0 evaluates only at the end
  int snapshot_every = 0;
  std::string snapshot_dir;  // empty disables snapshots
  std::uint64_t seed = 0;
};

struct StepResult {
  Network net;
  double loss = 0.0;
  double lambda = 0.0;
  int cg_iterations = 0;
  ForwardTrace trace;  // of the pre-step network
  Linearization lin;
  Gradients grads;
};

// Solves (F + δI)x = g by CG with F = (1/N) JᵀJ applied through jvp/vjp, then
// θ ← θ − lr·x − lr·wd·θ on weights. Propagates NumericalBreakdown.
StepResult natural_gradient_step(const Network& net, const Matrix& inputs, const Matrix& targets,
                                 TaskKind task, const TrainConfig& config);

struct Metrics {
  double loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // classification only
  double mse = std::numeric_limits<double>::quiet_NaN();       // least squares only
};

Metrics evaluate(const Network& net, const Matrix& inputs, const Matrix& targets, TaskKind task);

// Accuracy for classification, MSE for regression.
double anytime_metric(const Metrics& m, TaskKind task);
// True when `after` is a drop of more than 0.1% from `before`.
bool anytime_dropped(double before, double after, TaskKind task);

struct LogRow {
  long step = 0;
  double loss = 0.0;
  double lambda = 0.0;
  double eta_total = 0.0;
  std::vector<double> eta_by_layer;
  std::vector<int> hidden_sizes;
  std::string event;
};

struct SurgeryCheck {
  long step = 0;
  std::string kind;  // "expand" or "prune"
  double before = 0.0;
  double after = 0.0;
  double max_output_deviation = 0.0;
  bool dropped = false;
};

struct TrainLog {
  std::vector<LogRow> rows;
  std::vector<nlohmann::json> events;
  std::vector<SurgeryCheck> surgeries;
  std::vector<std::pair<long, Metrics>> validation;
  std::vector<long> addition_steps;  // one entry per accepted addition
};

struct TrainResult {
  Network net;
  TrainLog log;
};

TrainResult train(const Network& net, const Dataset& data, const TrainConfig& train_config,
                  const ExpansionConfig& expansion_config);

// RFC-4180 CSV with header step,loss,lambda,eta_total,eta_by_layer,hidden_sizes,event.
std::string log_to_csv(const TrainLog& log);
// One JSON object per line.
std::string events_to_jsonl(const TrainLog& log);

}  // namespace senn
