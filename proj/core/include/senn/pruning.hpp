#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

#include "senn/curvature.hpp"
#include "senn/network.hpp"

namespace senn {

struct RemovalReport {
  int layer = 0;
  int neuron = 0;
  double removal_cost = 0.0;  // Δη′ of re-adding the neuron to the compensated network
  double eta_c = 0.0;         // η of the receiving layer before removal
  Matrix compensation;        // out × in of the receiving layer after removal
  double predicted_change = 0.0;  // w_jᵀ S w_j Â_j, the quadratic-model output change
};

struct PruneConfig {
  double tau = 1.0;
  int max_prunes_per_event = 1;
  double damping = 0.1;
  CurvatureMode curvature = CurvatureMode::kfac_moments;
  double jitter = 1e-8;
};

// Compensation regresses the deleted column on the surviving ones under the receiving
// layer's A factor in `state`; the cost is then scored against a fresh analysis of the
// compensated network on the batch, with `damping` on both factors and on A_p.
RemovalReport removal_cost(const Network& net, const KfacState& state, const Matrix& inputs,
                           const Matrix& targets, TaskKind task, int layer, int neuron,
                           double damping, double jitter = 1e-8);

// Drops neuron `neuron` of hidden layer `layer` and adds report.compensation to the receiver.
// Throws LastNeuron when the layer has a single neuron.
Network prune_neuron(const Network& net, int layer, int neuron, const RemovalReport& report);

struct PruneResult {
  Network net;
  std::vector<RemovalReport> pruned;
  std::vector<RemovalReport> evaluated;  // every candidate from the first pass
};

// Prunes the cheapest neurons whose cost is below τ·η of their receiving layer.
PruneResult prune_event(const Network& net, const Matrix& inputs, const Matrix& targets,
                        TaskKind task, const PruneConfig& config);

nlohmann::json to_json(const RemovalReport& report);

}  // namespace senn
