#include "senn/pruning.hpp"

#include <algorithm>
#include <limits>

#include "senn/error.hpp"
#include "senn/expansion.hpp"

namespace senn {

namespace {

std::vector<Eigen::Index> surviving(Eigen::Index n, Eigen::Index removed) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i != removed) idx.push_back(i);
  }
  return idx;
}

void check_neuron(const Network& net, int layer, int neuron) {
  if (layer < 0 || layer + 1 >= net.n_layers()) {
    throw Error(ErrorKind::IndexOutOfRange, "pruning needs a hidden layer index");
  }
  if (neuron < 0 || neuron >= net.layers[layer].out_dim()) {
    throw Error(ErrorKind::IndexOutOfRange, "neuron index out of range");
  }
}

}  // namespace

RemovalReport removal_cost(const Network& net, const KfacState& state, const Matrix& inputs,
                           const Matrix& targets, TaskKind task, int layer, int neuron,
                           double damping, double jitter) {
  check_neuron(net, layer, neuron);
  const int r = layer + 1;
  const Matrix& a = state.layers.at(static_cast<std::size_t>(r)).a;
  const Matrix& w = net.layers[r].weights;
  const Eigen::Index in = w.cols();
  const std::vector<Eigen::Index> o = surviving(in, neuron);
  const auto m = static_cast<Eigen::Index>(o.size());

  Matrix a_oo(m, m);
  Vector a_oj(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    a_oj(i) = a(o[i], neuron);
    for (Eigen::Index k = 0; k < m; ++k) a_oo(i, k) = a(o[i], o[k]);
  }
  // A tiny ridge keeps the regression defined when surviving features are collinear.
  const double ridge = 1e-12 * std::max(a_oo.diagonal().mean(), 1e-300);
  a_oo.diagonal().array() += ridge;
  const Vector beta = a_oo.ldlt().solve(a_oj);
  const Vector w_j = w.col(neuron);

  RemovalReport rep;
  rep.layer = layer;
  rep.neuron = neuron;
  rep.compensation = w_j * beta.transpose();
  const double schur = std::max(0.0, a(neuron, neuron) - a_oj.dot(beta));
  rep.predicted_change = w_j.dot(state.layers[r].s * w_j) * schur;

  const Network pruned = prune_neuron(net, layer, neuron, rep);
  const BatchAnalysis before =
      analyze_batch(net, inputs, targets, task, damping, CurvatureMode::kfac_moments, nullptr);
  rep.eta_c = before.layer_eta[static_cast<std::size_t>(r)];
  const BatchAnalysis after =
      analyze_batch(pruned, inputs, targets, task, damping, CurvatureMode::kfac_moments, nullptr);
  // Same damped A_p as expansion scoring, so pruning and re-adding agree.
  const ScoringContext ctx = width_context(after, layer, damping + jitter);
  const DenseLayer& src = net.layers[layer];
  Matrix theta(1, 3);
  theta << src.activations[neuron].alpha, src.activations[neuron].beta, src.activations[neuron].gamma;
  rep.removal_cost = evaluate_width_candidates(ctx, src.weights.row(neuron), theta, false).score(0);
  return rep;
}

Network prune_neuron(const Network& net, int layer, int neuron, const RemovalReport& report) {
  check_neuron(net, layer, neuron);
  const DenseLayer& src = net.layers[layer];
  if (src.out_dim() <= 1) throw Error(ErrorKind::LastNeuron, "refusing to empty a hidden layer");
  const DenseLayer& recv = net.layers[layer + 1];
  const Eigen::Index in = recv.weights.cols();
  if (report.compensation.rows() != recv.out_dim() || report.compensation.cols() != in - 1) {
    throw Error(ErrorKind::ShapeMismatch, "compensation shape does not match the receiving layer");
  }
  Network out = net;
  DenseLayer& l = out.layers[layer];
  const std::vector<Eigen::Index> rows = surviving(src.out_dim(), neuron);
  l.weights = src.weights(rows, Eigen::all);
  l.activations.erase(l.activations.begin() + neuron);
  DenseLayer& rl = out.layers[layer + 1];
  const std::vector<Eigen::Index> cols = surviving(in, neuron);
  rl.weights = recv.weights(Eigen::all, cols);
  rl.weights += report.compensation;
  validate_network(out);
  return out;
}

PruneResult prune_event(const Network& net, const Matrix& inputs, const Matrix& targets,
                        TaskKind task, const PruneConfig& config) {
  PruneResult res;
  res.net = net;
  for (int round = 0; round < config.max_prunes_per_event; ++round) {
    const BatchAnalysis ba = analyze_batch(res.net, inputs, targets, task, config.damping,
                                           CurvatureMode::kfac_moments, nullptr);
    std::vector<RemovalReport> reports;
    for (int l = 0; l + 1 < res.net.n_layers(); ++l) {
      if (res.net.layers[l].out_dim() <= 1) continue;
      for (int j = 0; j < res.net.layers[l].out_dim(); ++j) {
        reports.push_back(removal_cost(res.net, ba.state, inputs, targets, task, l, j,
                                       config.damping, config.jitter));
      }
    }
    if (round == 0) res.evaluated = reports;
    const RemovalReport* best = nullptr;
    for (const RemovalReport& rep : reports) {
      if (!(rep.removal_cost < config.tau * rep.eta_c)) continue;
      if (best == nullptr || rep.removal_cost < best->removal_cost) best = &rep;
    }
    if (best == nullptr) break;
    res.net = prune_neuron(res.net, best->layer, best->neuron, *best);
    res.pruned.push_back(*best);
  }
  return res;
}

nlohmann::json to_json(const RemovalReport& report) {
  return {{"type", "prune"},
          {"layer", report.layer},
          {"neuron", report.neuron},
          {"removal_cost", report.removal_cost},
          {"eta_c", report.eta_c},
          {"predicted_change", report.predicted_change}};
}

}  // namespace senn
