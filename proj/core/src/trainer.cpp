#include "senn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "senn/error.hpp"
#include "senn/serialize.hpp"

namespace senn {

namespace {

std::string fmt17(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j{{"loss", m.loss}};
  if (std::isfinite(m.accuracy)) j["accuracy"] = m.accuracy;
  if (std::isfinite(m.mse)) j["mse"] = m.mse;
  return j;
}

// Mask selecting weights and biases in canonical parameter order.
Vector weight_mask(const Network& net) {
  Vector mask(parameter_count(net));
  Eigen::Index k = 0;
  for (const DenseLayer& l : net.layers) {
    mask.segment(k, l.weights.size()).setOnes();
    k += l.weights.size();
    const auto n_act = static_cast<Eigen::Index>(3 * l.activations.size());
    mask.segment(k, n_act).setZero();
    k += n_act;
  }
  return mask;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt17(v[i]);
  return s + "]";
}

class BatchSampler {
 public:
  BatchSampler(std::vector<Eigen::Index> pool, int batch_size, std::uint64_t seed)
      : pool_(std::move(pool)), batch_(batch_size), engine_(seed) {}

  bool full_batch() const { return batch_ <= 0 || static_cast<std::size_t>(batch_) >= pool_.size(); }

  std::vector<Eigen::Index> next() {
    if (full_batch()) return pool_;
    if (cursor_ == 0 || cursor_ + static_cast<std::size_t>(batch_) > order_.size()) {
      order_ = pool_;
      std::shuffle(order_.begin(), order_.end(), engine_);
      cursor_ = 0;
    }
    std::vector<Eigen::Index> b(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += static_cast<std::size_t>(batch_);
    return b;
  }

 private:
  std::vector<Eigen::Index> pool_;
  std::vector<Eigen::Index> order_;
  std::size_t cursor_ = 0;
  int batch_;
  std::mt19937_64 engine_;
};

}  // namespace

StepResult natural_gradient_step(const Network& net, const Matrix& inputs, const Matrix& targets,
                                 TaskKind task, const TrainConfig& config) {
  StepResult res;
  res.trace = forward(net, inputs);
  res.lin = linearize(net, res.trace);
  const LossResult loss = compute_loss(res.trace.outputs, targets, task);
  res.loss = loss.loss;
  res.lambda = lambda_bound(loss.output_grads);
  res.grads = backward(net, res.trace, res.lin, loss.output_grads);
  const Vector g = flatten_gradients(net, res.grads);
  const double inv_n = 1.0 / static_cast<double>(std::max<Eigen::Index>(inputs.rows(), 1));
  const LinearOperator fisher = [&](const Vector& v) {
    return Vector(inv_n * vjp(net, res.trace, res.lin, jvp(net, res.trace, res.lin, v)));
  };
  const CgResult cg = cg_solve(fisher, g, config.damping, config.cg_max_iters, config.cg_rel_tol);
  res.cg_iterations = cg.iterations;
  Vector theta = flatten_parameters(net);
  const Vector decay = weight_mask(net).cwiseProduct(theta);
  theta -= config.learning_rate * cg.x + config.learning_rate * config.weight_decay * decay;
  res.net = net;
  assign_parameters(res.net, theta);
  return res;
}

Metrics evaluate(const Network& net, const Matrix& inputs, const Matrix& targets, TaskKind task) {
  Metrics m;
  if (inputs.rows() == 0) return m;
  const Matrix out = predict(net, inputs);
  m.loss = compute_loss(out, targets, task).loss;
  if (task == TaskKind::softmax_cross_entropy) {
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      Eigen::Index p = 0, t = 0;
      out.row(i).maxCoeff(&p);
      targets.row(i).maxCoeff(&t);
      if (p == t) ++correct;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(out.rows());
  } else {
    m.mse = (out - targets).squaredNorm() / static_cast<double>(out.rows());
  }
  return m;
}

double anytime_metric(const Metrics& m, TaskKind task) {
  return task == TaskKind::softmax_cross_entropy ? m.accuracy : m.mse;
}

bool anytime_dropped(double before, double after, TaskKind task) {
  if (task == TaskKind::softmax_cross_entropy) return after < before - 1e-3;
  return after > before * (1.0 + 1e-3);
}

TrainResult train(const Network& start, const Dataset& data, const TrainConfig& config,
                  const ExpansionConfig& expansion_config) {
  if (!(config.learning_rate > 0.0)) throw Error(ErrorKind::Config, "learning_rate must be positive");
  if (config.expand_every < 1) throw Error(ErrorKind::Config, "expand_every must be at least 1");
  const TaskKind task = data.task;
  const Matrix val_x = rows_of(data.inputs, data.validation);
  const Matrix val_t = rows_of(data.targets, data.validation);
  BatchSampler sampler(data.train, config.batch_size, stream_seed(config.seed, {0x7u}));
  const bool full = sampler.full_batch();
  Matrix full_x, full_t;
  if (full) {
    full_x = rows_of(data.inputs, data.train);
    full_t = rows_of(data.targets, data.train);
  }
  if (!config.snapshot_dir.empty()) std::filesystem::create_directories(config.snapshot_dir);

  TrainResult res;
  res.net = start;
  TrainLog& log = res.log;
  KfacState state;
  bool state_valid = false;
  std::vector<double> eta_by_layer;
  double eta_act = 0.0;
  long last_depth = std::numeric_limits<long>::min() / 2;
  const int kfac_every = std::max(config.kfac_every, 1);

  auto snapshot = [&](long step) {
    if (config.snapshot_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof name, "snapshot_%08ld.json", step);
    save_snapshot(res.net, (std::filesystem::path(config.snapshot_dir) / name).string());
  };
  auto validate = [&]() { return anytime_metric(evaluate(res.net, val_x, val_t, task), task); };

  for (long step = 1; step <= config.total_steps; ++step) {
    Matrix bx, bt;
    if (!full) {
      const std::vector<Eigen::Index> idx = sampler.next();
      bx = rows_of(data.inputs, idx);
      bt = rows_of(data.targets, idx);
    }
    const Matrix& x = full ? full_x : bx;
    const Matrix& t = full ? full_t : bt;

    StepResult sr = natural_gradient_step(res.net, x, t, task, config);
    if (!state_valid || (step - 1) % kfac_every == 0) {
      const CurvatureBatch cb =
          curvature_batch(res.net, sr.trace, sr.lin, t, task, CurvatureMode::kfac_moments, nullptr);
      if (!state_valid) {
        state = kfac_from_batch(res.net, cb, config.damping);
        state.ema_decay = config.kfac_ema;
        state.drift_threshold = config.kfac_drift_threshold;
        state_valid = true;
      } else {
        state = kfac_update_from_batch(state, cb);
      }
      eta_by_layer.assign(static_cast<std::size_t>(res.net.n_layers()), 0.0);
      eta_act = 0.0;
      for (int l = 0; l < res.net.n_layers(); ++l) {
        eta_by_layer[static_cast<std::size_t>(l)] = layer_eta_kfac(state, l, sr.grads.weights[l]);
        eta_act += activation_eta(state, l, sr.grads.activations[l]);
      }
    }
    LogRow row;
    row.step = step;
    row.loss = sr.loss;
    row.lambda = sr.lambda;
    row.eta_by_layer = eta_by_layer;
    row.eta_total = eta_act;
    for (double e : eta_by_layer) row.eta_total += e;
    res.net = std::move(sr.net);

    std::string event;
    if (config.expansion_enabled && step % config.expand_every == 0) {
      const bool depth_ok = step - last_depth >= config.depth_cooldown;
      const Matrix before_out = predict(res.net, x);
      const double metric_before = validate();
      ExpansionResult er = expansion_event(res.net, x, t, task, expansion_config,
                                           stream_seed(config.seed, {0xEu, static_cast<std::uint64_t>(step)}),
                                           depth_ok);
      nlohmann::json ev = to_json(er.report);
      ev["step"] = step;
      if (!er.report.accepted.empty()) {
        double max_dev = 0.0;
        for (const AcceptedAddition& a : er.report.accepted) {
          max_dev = std::max(max_dev, a.output_deviation);
          log.addition_steps.push_back(step);
          if (a.kind == ProposalKind::depth) last_depth = step;
          event += std::string(event.empty() ? "" : ";") + proposal_kind_name(a.kind) + "@" +
                   std::to_string(a.location);
        }
        res.net = std::move(er.net);
        state_valid = false;
        SurgeryCheck sc{step, "expand", metric_before, validate(),
                        std::max(max_dev, relative_deviation(before_out, predict(res.net, x))), false};
        sc.dropped = anytime_dropped(sc.before, sc.after, task);
        ev["validation_before"] = sc.before;
        ev["validation_after"] = sc.after;
        log.surgeries.push_back(sc);
      }
      log.events.push_back(std::move(ev));
    }
    if (config.prune_every > 0 && step % config.prune_every == 0) {
      const double metric_before = validate();
      PruneConfig pc = config.prune;
      pc.damping = config.damping;
      PruneResult pr = prune_event(res.net, x, t, task, pc);
      for (const RemovalReport& rep : pr.pruned) {
        nlohmann::json ev = to_json(rep);
        ev["step"] = step;
        log.events.push_back(std::move(ev));
        event += std::string(event.empty() ? "" : ";") + "prune@" + std::to_string(rep.layer);
      }
      if (!pr.pruned.empty()) {
        const Matrix before_out = predict(res.net, x);
        res.net = std::move(pr.net);
        state_valid = false;
        SurgeryCheck sc{step, "prune", metric_before, validate(),
                        relative_deviation(before_out, predict(res.net, x)), false};
        sc.dropped = anytime_dropped(sc.before, sc.after, task);
        log.surgeries.push_back(sc);
      }
    }
    row.hidden_sizes = hidden_sizes(res.net);
    row.event = event;
    log.rows.push_back(std::move(row));

    if ((config.eval_every > 0 && step % config.eval_every == 0) || step == config.total_steps) {
      const Metrics m = evaluate(res.net, val_x, val_t, task);
      log.validation.emplace_back(step, m);
      nlohmann::json ev{{"type", "validation"}, {"step", step}, {"metrics", metrics_json(m)}};
      log.events.push_back(std::move(ev));
    }
    if ((config.snapshot_every > 0 && step % config.snapshot_every == 0) || step == config.total_steps) {
      snapshot(step);
    }
  }
  return res;
}

std::string log_to_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "step,loss,lambda,eta_total,eta_by_layer,hidden_sizes,event\r\n";
  for (const LogRow& r : log.rows) {
    os << r.step << ',' << fmt17(r.loss) << ',' << fmt17(r.lambda) << ',' << fmt17(r.eta_total) << ','
       << csv_field(join_doubles(r.eta_by_layer)) << ',' << csv_field(join_ints(r.hidden_sizes)) << ','
       << csv_field(r.event) << "\r\n";
  }
  return os.str();
}

std::string events_to_jsonl(const TrainLog& log) {
  std::string out;
  for (const nlohmann::json& e : log.events) out += dump_json(e) + "\n";
  return out;
}

}  // namespace senn
