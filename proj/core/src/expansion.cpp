#include "senn/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "senn/error.hpp"

namespace senn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Rational3 {
  Matrix value, dsig, dbeta, dgamma;
};

// σ_θ applied columnwise; column j uses row j of theta (α, β, γ).
Rational3 rational_columns(const Matrix& z, const Matrix& theta, bool with_grad) {
  Rational3 r;
  r.value.resize(z.rows(), z.cols());
  if (with_grad) {
    r.dsig.resize(z.rows(), z.cols());
    r.dbeta.resize(z.rows(), z.cols());
    r.dgamma.resize(z.rows(), z.cols());
  }
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const RationalParams th{theta(j, 0), theta(j, 1), theta(j, 2)};
    for (Eigen::Index n = 0; n < z.rows(); ++n) {
      const double x = z(n, j);
      const double q = 1.0 + x * x;
      r.value(n, j) = th.alpha * x + (th.beta + th.gamma * x) / q;
      if (with_grad) {
        r.dsig(n, j) = th.alpha + (th.gamma - 2.0 * th.beta * x - th.gamma * x * x) / (q * q);
        r.dbeta(n, j) = 1.0 / q;
        r.dgamma(n, j) = x / q;
      }
    }
  }
  return r;
}

Matrix theta_gradient(const Matrix& d, const Matrix& z, const Rational3& r) {
  Matrix g(d.cols(), 3);
  g.col(0) = d.cwiseProduct(z).colwise().sum().transpose();
  g.col(1) = d.cwiseProduct(r.dbeta).colwise().sum().transpose();
  g.col(2) = d.cwiseProduct(r.dgamma).colwise().sum().transpose();
  return g;
}

std::vector<RationalParams> to_params(const Matrix& theta) {
  std::vector<RationalParams> out;
  for (Eigen::Index i = 0; i < theta.rows(); ++i) out.push_back({theta(i, 0), theta(i, 1), theta(i, 2)});
  return out;
}

Eigen::Index argmax(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

Eigen::Index draw_categorical(const Vector& w, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    acc += w(i);
    if (u < acc) return i;
  }
  return w.size() - 1;
}

// Row layout of a width point: [z_w (in + 1), z_θ (3)], w = z_w · scale.
struct WidthCoords {
  Eigen::Index cols;
  double scale;
};

// Row layout of a depth point: [z_W (d², row-major), z_θ (3d)], W_q = z_W · scale.
struct DepthCoords {
  Eigen::Index d;
  double scale;

  Matrix weights(const Eigen::Ref<const Vector>& row) const {
    Matrix w(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) w(i, j) = scale * row(i * d + j);
    return w;
  }
  Matrix theta(const Eigen::Ref<const Vector>& row) const {
    Matrix t(d, 3);
    for (Eigen::Index i = 0; i < d; ++i)
      for (int k = 0; k < 3; ++k) t(i, k) = row(d * d + 3 * i + k);
    return t;
  }
};

}  // namespace

const char* proposal_kind_name(ProposalKind kind) {
  return kind == ProposalKind::width ? "width" : "depth";
}

double lambda_bound(const Matrix& output_grads) {
  const double n = static_cast<double>(std::max<Eigen::Index>(output_grads.rows(), 1));
  return output_grads.squaredNorm() / n;
}

double natural_expansion_score_exact(const Network& net, const Matrix& inputs,
                                     const Matrix& targets, TaskKind task) {
  const Matrix jac = jacobian(net, inputs);
  const LossResult loss = compute_loss(predict(net, inputs), targets, task);
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d_out = net.output_dim();
  Vector gy(n * d_out);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d_out; ++k) gy(i * d_out + k) = loss.output_grads(i, k);
  // F = JᵀJ/N = V (Σ²/N) Vᵀ. Working from the factor keeps the digits that assembling F would lose.
  if (jac.size() == 0 || n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const Vector g = inv_n * (jac.transpose() * gy);
  Eigen::BDCSVD<Matrix> svd(jac, Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0.0;
  const double cut = 1e-10 * sv(0);
  const Vector coords = svd.matrixV().transpose() * g;
  double eta = 0.0;
  for (Eigen::Index i = 0; i < sv.size() && sv(i) > cut; ++i) {
    eta += coords(i) * coords(i) / (sv(i) * sv(i) * inv_n);
  }
  return eta;
}

Matrix residual_gradient(const Matrix& preact_grads, const Matrix& layer_inputs, const Matrix& a_root) {
  if (preact_grads.rows() != layer_inputs.rows() || a_root.rows() != layer_inputs.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "residual_gradient shapes");
  }
  const double n = static_cast<double>(std::max<Eigen::Index>(preact_grads.rows(), 1));
  const Matrix dw = preact_grads.transpose() * layer_inputs / n;  // out × d
  const Matrix xr = layer_inputs * a_root;                         // batch × d
  return preact_grads - xr * (a_root.transpose() * dw.transpose());
}

Matrix residual_gradient(const Matrix& preact_grads, const Matrix& layer_inputs,
                         const KfacState& state, int layer) {
  return residual_gradient(preact_grads, layer_inputs,
                           state.layers.at(static_cast<std::size_t>(layer)).a_root);
}

double delta_eta_lower_bound(const Matrix& a_p, const Matrix& g_r, const Matrix& s_inv, double jitter) {
  if (a_p.rows() != g_r.rows() || s_inv.rows() != g_r.cols() || s_inv.cols() != g_r.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "delta_eta_lower_bound shapes");
  }
  const double n = static_cast<double>(std::max<Eigen::Index>(a_p.rows(), 1));
  const Matrix c = g_r.transpose() * a_p / n;  // out × m
  Matrix ap = symmetrized(a_p.transpose() * a_p / n);
  ap.diagonal().array() += jitter;
  const Matrix l = cholesky(ap);
  const Matrix k = l.triangularView<Eigen::Lower>().solve(c.transpose()).transpose();  // C L⁻ᵀ
  return std::max(0.0, (k.cwiseProduct(s_inv * k)).sum());
}

WidthEvaluation evaluate_width_candidates(const ScoringContext& ctx, const Matrix& w,
                                          const Matrix& theta, bool with_grad) {
  const Matrix& x = ctx.features;
  const Matrix& gr = ctx.residual;
  const double n = static_cast<double>(std::max<Eigen::Index>(x.rows(), 1));
  const Matrix z = x * w.transpose();
  const Rational3 r = rational_columns(z, theta, with_grad);
  const Matrix c = gr.transpose() * r.value / n;  // out × K
  const Matrix mc = ctx.s_inv * c;
  const Vector ap = (r.value.colwise().squaredNorm().transpose() / n).array() + ctx.jitter;
  const Vector num = c.cwiseProduct(mc).colwise().sum().transpose();
  WidthEvaluation ev;
  ev.score = (num.array() / ap.array()).max(0.0).matrix();
  if (!with_grad) return ev;
  Matrix d = gr * mc - r.value * ev.score.asDiagonal();
  d = (2.0 / n) * d * ap.cwiseInverse().asDiagonal();
  const Matrix dz = d.cwiseProduct(r.dsig);
  ev.grad_w = dz.transpose() * x;
  ev.grad_theta = theta_gradient(d, z, r);
  return ev;
}

DepthEvaluation evaluate_depth_candidate(const ScoringContext& ctx, const Matrix& w_q,
                                         const Matrix& theta, double logdet_weight, bool with_grad) {
  const Matrix& f = ctx.features;
  const Matrix& gr = ctx.residual;
  const Eigen::Index d = w_q.rows();
  const double n = static_cast<double>(std::max<Eigen::Index>(f.rows(), 1));
  const Matrix z = f * w_q.transpose();
  const Rational3 r = rational_columns(z, theta, with_grad);
  const Matrix c = gr.transpose() * r.value / n;  // out × d
  Matrix ap = symmetrized(r.value.transpose() * r.value / n);
  ap.diagonal().array() += ctx.jitter;
  const Eigen::LLT<Matrix> llt(ap);
  DepthEvaluation ev;
  const Matrix mc = ctx.s_inv * c;
  const Matrix q = symmetrized(c.transpose() * mc);
  const Matrix ap_inv_q = llt.solve(q);
  ev.score = std::max(0.0, ap_inv_q.trace());

  Eigen::JacobiSVD<Matrix> svd(w_q, with_grad ? (Eigen::ComputeFullU | Eigen::ComputeFullV) : 0);
  const Vector sv = svd.singularValues();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) logdet += std::log(sv(i));
  ev.objective = std::isfinite(logdet) ? ev.score - logdet_weight * logdet * logdet : -kInf;
  if (!with_grad) return ev;
  if (!std::isfinite(logdet)) {
    ev.grad_w = Matrix::Zero(d, d);
    ev.grad_theta = Matrix::Zero(d, 3);
    return ev;
  }
  const Matrix kt = llt.solve(mc.transpose()).transpose();  // M C A_p⁻¹
  const Matrix zm = llt.solve(ap_inv_q.transpose()).transpose();  // A_p⁻¹ Q A_p⁻¹
  const Matrix dd = (2.0 / n) * (gr * kt - r.value * zm);
  const Matrix dz = dd.cwiseProduct(r.dsig);
  ev.grad_w = dz.transpose() * f;
  const Matrix inv_t = svd.matrixU() * sv.cwiseInverse().asDiagonal() * svd.matrixV().transpose();
  ev.grad_w -= 2.0 * logdet_weight * logdet * inv_t;
  ev.grad_theta = theta_gradient(dd, z, r);
  return ev;
}

OptimizationTrace gradient_ascent(const BatchObjective& f, const Matrix& start, int steps,
                                  double step_size) {
  OptimizationTrace tr;
  tr.points = start;
  Matrix grad;
  f(tr.points, tr.values, &grad);
  Vector step = Vector::Constant(start.rows(), step_size);
  Vector trial_values;
  Matrix trial_grad;
  for (int it = 0; it < steps; ++it) {
    Matrix trial = tr.points;
    for (Eigen::Index k = 0; k < trial.rows(); ++k) {
      const double norm = grad.row(k).norm();
      if (norm > 0.0 && std::isfinite(norm)) trial.row(k) += (step(k) / norm) * grad.row(k);
    }
    f(trial, trial_values, &trial_grad);
    for (Eigen::Index k = 0; k < trial.rows(); ++k) {
      if (trial_values(k) > tr.values(k)) {
        tr.points.row(k) = trial.row(k);
        tr.values(k) = trial_values(k);
        grad.row(k) = trial_grad.row(k);
      } else {
        step(k) /= 3.0;
      }
    }
    tr.best_history.push_back(tr.values.size() > 0 ? tr.values.maxCoeff() : 0.0);
  }
  return tr;
}

MalaResult mala_sample(const BatchObjective& f, const Matrix& start, double temperature, int steps,
                       double step_size, Rng& rng) {
  const Eigen::Index k = start.rows();
  const Eigen::Index dim = start.cols();
  MalaResult res;
  Matrix x = start;
  Vector v;
  Matrix g;
  f(x, v, &g);
  const double inv_t = 1.0 / temperature;
  auto log_target = [&](const Matrix& pts, const Vector& vals, Eigen::Index i) {
    return vals(i) * inv_t - 0.5 * pts.row(i).squaredNorm();
  };
  Vector eps = Vector::Constant(k, step_size);
  Vector window = Vector::Zero(k);
  double accepted = 0.0;
  Vector pv;
  Matrix pg;
  for (int it = 0; it < steps; ++it) {
    const Matrix gl = g * inv_t - x;
    Matrix prop(k, dim);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double e = eps(i);
      prop.row(i) = x.row(i) + 0.5 * e * e * gl.row(i) + e * rng.normal_vector(dim).transpose();
    }
    f(prop, pv, &pg);
    const Matrix pgl = pg * inv_t - prop;
    for (Eigen::Index i = 0; i < k; ++i) {
      const double e2 = eps(i) * eps(i);
      const double u = rng.uniform01();
      if (!std::isfinite(pv(i)) || !pg.row(i).allFinite()) continue;
      const double fwd = (prop.row(i) - x.row(i) - 0.5 * e2 * gl.row(i)).squaredNorm();
      const double bwd = (x.row(i) - prop.row(i) - 0.5 * e2 * pgl.row(i)).squaredNorm();
      const double log_a =
          log_target(prop, pv, i) - log_target(x, v, i) - (bwd - fwd) / (2.0 * e2);
      if (std::log(u) < log_a) {
        x.row(i) = prop.row(i);
        v(i) = pv(i);
        g.row(i) = pg.row(i);
        window(i) += 1.0;
        accepted += 1.0;
      }
    }
    if ((it + 1) % 10 == 0) {
      for (Eigen::Index i = 0; i < k; ++i) {
        const double rate = window(i) / 10.0;
        if (rate < 0.3) eps(i) /= 3.0;
        else if (rate > 0.9) eps(i) *= 3.0;
      }
      window.setZero();
    }
  }
  res.samples = x;
  res.values = v;
  res.acceptance_rate = steps > 0 && k > 0 ? accepted / (static_cast<double>(steps) * k) : 0.0;
  res.weights.resize(k);
  if (k > 0) {
    const double m = (v * inv_t).maxCoeff();
    for (Eigen::Index i = 0; i < k; ++i) res.weights(i) = std::exp(v(i) * inv_t - m);
    res.weights /= res.weights.sum();
    res.expected_value = res.weights.dot(v);
  }
  return res;
}

Proposal propose_width(const ScoringContext& ctx, int layer, const ExpansionConfig& config, Rng& rng) {
  const Eigen::Index cols = ctx.features.cols();
  const WidthCoords wc{cols, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(cols - 1, 1)))};
  const int k = std::max(config.n_width_proposals, 1);
  const Matrix start = rng.normal_matrix(k, cols + 3);

  BatchObjective f = [&](const Matrix& pts, Vector& value, Matrix* grad) {
    const Matrix w = pts.leftCols(cols) * wc.scale;
    const Matrix theta = pts.rightCols(3);
    WidthEvaluation ev = evaluate_width_candidates(ctx, w, theta, grad != nullptr);
    value = ev.score;
    if (grad != nullptr) {
      grad->resize(pts.rows(), pts.cols());
      grad->leftCols(cols) = ev.grad_w * wc.scale;
      grad->rightCols(3) = ev.grad_theta;
    }
  };

  Proposal p;
  p.kind = ProposalKind::width;
  p.location = layer;
  Matrix pts;
  Vector values;
  Eigen::Index pick = 0;
  if (config.optimizer == ProposalOptimizer::mala && config.opt_steps > 0) {
    MalaResult mr = mala_sample(f, start, config.mala_temperature, config.opt_steps,
                                config.opt_step_size, rng);
    pick = config.mala_argmax ? argmax(mr.values) : draw_categorical(mr.weights, rng);
    p.score = mr.expected_value;
    pts = std::move(mr.samples);
    values = std::move(mr.values);
  } else {
    OptimizationTrace tr = gradient_ascent(f, start, config.opt_steps, config.opt_step_size);
    pick = argmax(tr.values);
    p.score = tr.values(pick);
    pts = std::move(tr.points);
    values = std::move(tr.values);
  }
  p.realized = values(pick);
  p.weights = pts.row(pick).head(cols) * wc.scale;
  p.activations = to_params(pts.row(pick).tail(3));
  return p;
}

Proposal propose_depth(const ScoringContext& ctx, int position, const ExpansionConfig& config, Rng& rng) {
  const Eigen::Index d = ctx.features.cols();
  const DepthCoords dc{d, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(d, 1)))};
  const int k = std::max(config.n_depth_proposals, 1);
  const Eigen::Index dim = d * d + 3 * d;
  const Matrix start = rng.normal_matrix(k, dim);

  BatchObjective f = [&](const Matrix& pts, Vector& value, Matrix* grad) {
    value.resize(pts.rows());
    if (grad != nullptr) grad->resize(pts.rows(), pts.cols());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const Vector row = pts.row(i).transpose();
      const DepthEvaluation ev = evaluate_depth_candidate(ctx, dc.weights(row), dc.theta(row),
                                                          config.depth_logdet_weight, grad != nullptr);
      value(i) = ev.objective;
      if (grad != nullptr) {
        for (Eigen::Index a = 0; a < d; ++a) {
          for (Eigen::Index b = 0; b < d; ++b) (*grad)(i, a * d + b) = ev.grad_w(a, b) * dc.scale;
          for (int t = 0; t < 3; ++t) (*grad)(i, d * d + 3 * a + t) = ev.grad_theta(a, t);
        }
      }
    }
  };

  Matrix pts;
  Vector weights;
  double expected_obj = 0.0;
  bool mala = config.optimizer == ProposalOptimizer::mala && config.opt_steps > 0;
  if (mala) {
    MalaResult mr = mala_sample(f, start, config.mala_temperature, config.opt_steps,
                                config.opt_step_size, rng);
    pts = std::move(mr.samples);
    weights = std::move(mr.weights);
    expected_obj = mr.expected_value;
  } else {
    pts = gradient_ascent(f, start, config.opt_steps, config.opt_step_size).points;
  }
  (void)expected_obj;

  // Clamp, then score the clamped transforms without the penalty.
  std::vector<Matrix> clamped(static_cast<std::size_t>(pts.rows()));
  Vector scores(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vector row = pts.row(i).transpose();
    clamped[static_cast<std::size_t>(i)] = clamp_singular_values(dc.weights(row), config.depth_clamp_ratio);
    scores(i) = evaluate_depth_candidate(ctx, clamped[static_cast<std::size_t>(i)], dc.theta(row),
                                         0.0, false).score / config.layer_score_factor;
  }
  Eigen::Index pick = 0;
  Proposal p;
  p.kind = ProposalKind::depth;
  p.location = position;
  if (mala) {
    pick = config.mala_argmax ? argmax(scores) : draw_categorical(weights, rng);
    p.score = weights.dot(scores);
  } else {
    pick = argmax(scores);
    p.score = scores(pick);
  }
  p.realized = scores(pick);
  p.weights = clamped[static_cast<std::size_t>(pick)];
  p.activations = to_params(dc.theta(pts.row(pick).transpose()));
  return p;
}

double theorem1_bound(double lambda, double alpha, double tau) {
  if (!(alpha > 0.0)) return kInf;
  // Below λ = α/(1+τ) the formula turns negative; nothing can pass the α gate there.
  if (!(lambda > 0.0)) return 0.0;
  return std::max(0.0, 1.0 + (std::log(lambda) - std::log(alpha)) / std::log1p(tau));
}

BatchAnalysis analyze_batch(const Network& net, const Matrix& inputs, const Matrix& targets,
                            TaskKind task, double damping, CurvatureMode mode, Rng* rng) {
  BatchAnalysis ba;
  ba.trace = forward(net, inputs);
  ba.lin = linearize(net, ba.trace);
  const LossResult loss = compute_loss(ba.trace.outputs, targets, task);
  ba.loss = loss.loss;
  ba.lambda = lambda_bound(loss.output_grads);
  ba.grads = backward(net, ba.trace, ba.lin, loss.output_grads);
  const CurvatureMode m = mode == CurvatureMode::exact_fisher ? CurvatureMode::kfac_moments : mode;
  const CurvatureBatch cb = curvature_batch(net, ba.trace, ba.lin, targets, task, m, rng);
  ba.state = kfac_from_batch(net, cb, damping);
  for (int l = 0; l < net.n_layers(); ++l) {
    ba.layer_eta.push_back(layer_eta_kfac(ba.state, l, ba.grads.weights[l]));
    ba.activation_eta += activation_eta(ba.state, l, ba.grads.activations[l]);
  }
  return ba;
}

ScoringContext width_context(const BatchAnalysis& ba, int layer, double jitter) {
  const int r = layer + 1;
  const KfacLayer& kl = ba.state.layers.at(static_cast<std::size_t>(r));
  ScoringContext ctx;
  ctx.features = ba.trace.inputs.at(static_cast<std::size_t>(layer));
  ctx.residual = residual_gradient(ba.grads.preacts[r], ba.trace.inputs[r], kl.a_root);
  ctx.s_inv = symmetrized(kl.s_root * kl.s_root.transpose());
  ctx.eta_c = ba.layer_eta[static_cast<std::size_t>(r)];
  ctx.jitter = jitter;
  return ctx;
}

ScoringContext depth_context(const BatchAnalysis& ba, int position, double jitter) {
  const KfacLayer& kl = ba.state.layers.at(static_cast<std::size_t>(position));
  const Matrix& x = ba.trace.inputs[position];
  ScoringContext ctx;
  ctx.features = x.leftCols(x.cols() - 1);
  ctx.residual = residual_gradient(ba.grads.preacts[position], x, kl.a_root);
  ctx.s_inv = symmetrized(kl.s_root * kl.s_root.transpose());
  ctx.eta_c = ba.layer_eta[static_cast<std::size_t>(position)];
  ctx.jitter = jitter;
  return ctx;
}

nlohmann::json to_json(const ScoreReport& report) {
  nlohmann::json j;
  j["type"] = "expansion";
  j["layer_eta"] = report.layer_eta;
  j["activation_eta"] = report.activation_eta;
  j["eta_total"] = report.eta_total;
  j["lambda"] = report.lambda;
  j["theorem1_bound"] = std::isfinite(report.theorem1_bound) ? nlohmann::json(report.theorem1_bound)
                                                              : nlohmann::json(nullptr);
  j["iterations"] = report.iterations;
  nlohmann::json cands = nlohmann::json::array();
  for (const LocationScore& c : report.candidates) {
    cands.push_back({{"kind", proposal_kind_name(c.kind)},
                     {"location", c.location},
                     {"eta_c", c.eta_c},
                     {"score", c.score},
                     {"eligible", c.eligible}});
  }
  j["candidates"] = std::move(cands);
  nlohmann::json acc = nlohmann::json::array();
  for (const AcceptedAddition& a : report.accepted) {
    acc.push_back({{"kind", proposal_kind_name(a.kind)},
                   {"location", a.location},
                   {"neurons", a.neurons},
                   {"score", a.score},
                   {"realized", a.realized},
                   {"eta_c", a.eta_c},
                   {"ratio", a.eta_c > 0.0 ? nlohmann::json(a.score / a.eta_c) : nlohmann::json(nullptr)},
                   {"output_deviation", a.output_deviation}});
  }
  j["accepted"] = std::move(acc);
  return j;
}

ExpansionResult expansion_event(const Network& net, const Matrix& inputs, const Matrix& targets,
                                TaskKind task, const ExpansionConfig& config, std::uint64_t seed,
                                bool depth_allowed) {
  ExpansionResult res;
  res.net = net;
  ScoreReport& report = res.report;
  bool depth_used = false;
  for (int iter = 0;; ++iter) {
    Rng curv_rng(stream_seed(seed, {static_cast<std::uint64_t>(iter), 0xC0}));
    const BatchAnalysis ba =
        analyze_batch(res.net, inputs, targets, task, config.damping, config.curvature, &curv_rng);
    report.iterations = iter + 1;
    if (iter == 0) {
      report.layer_eta = ba.layer_eta;
      report.activation_eta = ba.activation_eta;
      report.eta_total = ba.activation_eta;
      for (double e : ba.layer_eta) report.eta_total += e;
      report.lambda = ba.lambda;
      report.theorem1_bound = theorem1_bound(ba.lambda, config.alpha_stop, config.tau);
    }
    if (static_cast<int>(report.accepted.size()) >= config.max_additions_per_event) break;

    std::vector<std::pair<Proposal, double>> cands;  // proposal, η_c
    // A_p carries the same damping as A_c, so Δη′ lower-bounds the damped η_c gain.
    const double a_p_reg = config.damping + config.proposal_jitter;
    const int n_layers = res.net.n_layers();
    if (config.allow_width) {
      for (int l = 0; l + 1 < n_layers; ++l) {
        const ScoringContext ctx = width_context(ba, l, a_p_reg);
        Rng rng(stream_seed(seed, {static_cast<std::uint64_t>(iter), 1, static_cast<std::uint64_t>(l)}));
        cands.emplace_back(propose_width(ctx, l, config, rng), ctx.eta_c);
      }
    }
    if (config.allow_depth && depth_allowed && !depth_used) {
      for (int k = 0; k < n_layers; ++k) {
        if (res.net.layers[k].in_dim() > config.max_depth_width) continue;
        const ScoringContext ctx = depth_context(ba, k, a_p_reg);
        Rng rng(stream_seed(seed, {static_cast<std::uint64_t>(iter), 2, static_cast<std::uint64_t>(k)}));
        cands.emplace_back(propose_depth(ctx, k, config, rng), ctx.eta_c);
      }
    }

    int best = -1;
    for (int i = 0; i < static_cast<int>(cands.size()); ++i) {
      const Proposal& p = cands[i].first;
      const double eta_c = cands[i].second;
      const bool eligible = p.score > config.tau * eta_c && p.score > config.alpha_stop;
      if (iter == 0) report.candidates.push_back({p.kind, p.location, eta_c, p.score, eligible});
      if (!eligible) continue;
      if (best < 0) {
        best = i;
        continue;
      }
      const Proposal& b = cands[best].first;
      const bool better =
          p.score > b.score ||
          (p.score == b.score && (p.location < b.location ||
                                  (p.location == b.location && p.kind == ProposalKind::width &&
                                   b.kind == ProposalKind::depth)));
      if (better) best = i;
    }
    if (best < 0) break;

    const Proposal& p = cands[best].first;
    const Matrix before = ba.trace.outputs;
    Network next = p.kind == ProposalKind::width
                       ? add_width(res.net, p.location, p.weights, p.activations)
                       : insert_layer(res.net, p.location, p.weights);
    const Matrix after = predict(next, inputs);
    AcceptedAddition acc;
    acc.kind = p.kind;
    acc.location = p.location;
    acc.neurons = static_cast<int>(p.weights.rows());
    acc.score = p.score;
    acc.realized = p.realized;
    acc.eta_c = cands[best].second;
    acc.output_deviation = relative_deviation(before, after);
    if (p.kind == ProposalKind::width ? acc.output_deviation != 0.0 : !(acc.output_deviation <= 1e-8)) {
      throw Error(ErrorKind::FunctionPreservationBug,
                  std::string(proposal_kind_name(p.kind)) + " addition changed batch outputs");
    }
    if (p.kind == ProposalKind::depth) depth_used = true;
    report.accepted.push_back(acc);
    res.net = std::move(next);
  }

  if (config.alpha_stop > 0.0 &&
      static_cast<double>(report.accepted.size()) > report.theorem1_bound) {
    throw Error(ErrorKind::Theorem1ViolationBug,
                std::to_string(report.accepted.size()) + " additions exceed the bound " +
                    std::to_string(report.theorem1_bound));
  }
  return res;
}

}  // namespace senn
