#include "senn/curvature.hpp"

#include <algorithm>
#include <cmath>

#include "senn/error.hpp"

namespace senn {

namespace {

Matrix root_of_damped(const Matrix& factor, double damping) {
  const Eigen::Index d = factor.rows();
  if (damping == 0.0 && factor.isZero(0.0)) return Matrix::Zero(d, d);
  return inverse_root(symmetrized(factor) + damping * Matrix::Identity(d, d));
}

void track_root(Matrix& root, const Matrix& rows, double row_scale, double ema, double damping) {
  root /= std::sqrt(ema);
  Vector v(root.rows());
  for (Eigen::Index n = 0; n < rows.rows(); ++n) {
    v = row_scale * rows.row(n).transpose();
    rank_one_inverse_root_update_inplace(root, v);
  }
  const double ds = std::sqrt((1.0 - ema) * damping);
  if (ds > 0.0) {
    for (Eigen::Index i = 0; i < root.rows(); ++i) {
      v.setZero();
      v(i) = ds;
      rank_one_inverse_root_update_inplace(root, v);
    }
  }
}

double damped_drift(const Matrix& root, const Matrix& factor, double damping) {
  const Eigen::Index d = factor.rows();
  if (d == 0) return 0.0;
  return inverse_root_drift(root, factor + damping * Matrix::Identity(d, d));
}

// Cholesky factor of diag(p) − p pᵀ + 1e-8 I.
Matrix softmax_hessian_factor(const Vector& p) {
  Matrix h = -p * p.transpose();
  h.diagonal() += p;
  h.diagonal().array() += 1e-8;
  return cholesky(symmetrized(h));
}

}  // namespace

Matrix exact_fisher(const Network& net, const Matrix& inputs) {
  const Matrix jac = jacobian(net, inputs);
  const double n = static_cast<double>(std::max<Eigen::Index>(inputs.rows(), 1));
  return symmetrized(jac.transpose() * jac / n);
}

UbahSample ubah_sample(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                       const Matrix& targets, TaskKind task, Rng& rng, bool activation_noise,
                       const Gradients* signals) {
  const int n_layers = net.n_layers();
  const Eigen::Index n = trace.batch();
  const Eigen::Index d_out = net.output_dim();
  Gradients computed;
  if (signals == nullptr) {
    computed = backprop_signals(net, trace, lin, compute_loss(trace.outputs, targets, task).output_grads);
  }
  const Gradients& true_grads = signals != nullptr ? *signals : computed;

  Matrix xi = rng.normal_matrix(n, d_out);
  Matrix seed(n, d_out);
  if (task == TaskKind::least_squares) {
    seed = xi;
  } else {
    const Matrix p = softmax_rows(trace.outputs);
    for (Eigen::Index i = 0; i < n; ++i) {
      seed.row(i) = (softmax_hessian_factor(p.row(i).transpose()) * xi.row(i).transpose()).transpose();
    }
  }

  UbahSample out;
  out.u.resize(n_layers);
  out.act.resize(n_layers);
  out.u[n_layers - 1] = seed;
  for (int l = n_layers - 1; l >= 1; --l) {
    const DenseLayer& layer = net.layers[l];
    const int prev = l - 1;
    const Matrix dh = out.u[l] * layer.weights.leftCols(layer.in_dim());
    Matrix act(dh.cols(), 3);
    act.col(0) = dh.cwiseProduct(lin.dalpha[prev]).cwiseAbs2().colwise().sum().transpose();
    act.col(1) = dh.cwiseProduct(lin.dbeta[prev]).cwiseAbs2().colwise().sum().transpose();
    act.col(2) = dh.cwiseProduct(lin.dgamma[prev]).cwiseAbs2().colwise().sum().transpose();
    out.act[prev] = std::move(act);
    Matrix u = dh.cwiseProduct(lin.dsig[prev]);
    if (activation_noise) {
      const Matrix& p = trace.preacts[prev];
      const Matrix& g = true_grads.hidden[prev];
      for (Eigen::Index j = 0; j < u.cols(); ++j) {
        const RationalParams& th = net.layers[prev].activations[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < n; ++i) {
          const double w = std::abs(g(i, j) * rational_d2x(th, p(i, j)));
          const double z = rng.normal();
          u(i, j) += z * std::sqrt(w);
        }
      }
    }
    out.u[prev] = std::move(u);
  }
  out.input_covector = out.u[0] * net.layers[0].weights.leftCols(net.input_dim);
  return out;
}

CurvatureBatch curvature_batch(const Network& net, const ForwardTrace& trace,
                               const Linearization& lin, const Matrix& targets, TaskKind task,
                               CurvatureMode mode, Rng* rng) {
  const int n_layers = net.n_layers();
  const Eigen::Index n = trace.batch();
  const Eigen::Index d_out = net.output_dim();
  CurvatureBatch cb;
  cb.n_examples = n;
  cb.a = trace.inputs;
  cb.s.resize(n_layers);
  cb.act_sq.resize(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    cb.s[l] = Matrix::Zero(0, net.layers[l].out_dim());
    cb.act_sq[l] = Matrix::Zero(net.layers[l].is_output ? 0 : net.layers[l].out_dim(), 3);
  }
  const double inv_n = 1.0 / static_cast<double>(std::max<Eigen::Index>(n, 1));

  if (mode == CurvatureMode::kfac_ubah) {
    if (rng == nullptr) throw Error(ErrorKind::ShapeMismatch, "ubah curvature needs an rng stream");
    UbahSample smp = ubah_sample(net, trace, lin, targets, task, *rng);
    for (int l = 0; l < n_layers; ++l) {
      cb.s[l] = std::move(smp.u[l]);
      if (!net.layers[l].is_output) cb.act_sq[l] = smp.act[l] * inv_n;
    }
    return cb;
  }

  for (int l = 0; l < n_layers; ++l) cb.s[l].resize(n * d_out, net.layers[l].out_dim());
  for (Eigen::Index k = 0; k < d_out; ++k) {
    Matrix seed = Matrix::Zero(n, d_out);
    seed.col(k).setOnes();
    const Gradients sig = backprop_signals(net, trace, lin, seed);
    for (int l = 0; l < n_layers; ++l) {
      cb.s[l].middleRows(k * n, n) = sig.preacts[l];
      if (!net.layers[l].is_output) {
        const Matrix& dh = sig.hidden[l];
        cb.act_sq[l].col(0) += inv_n * dh.cwiseProduct(lin.dalpha[l]).cwiseAbs2().colwise().sum().transpose();
        cb.act_sq[l].col(1) += inv_n * dh.cwiseProduct(lin.dbeta[l]).cwiseAbs2().colwise().sum().transpose();
        cb.act_sq[l].col(2) += inv_n * dh.cwiseProduct(lin.dgamma[l]).cwiseAbs2().colwise().sum().transpose();
      }
    }
  }
  return cb;
}

KfacState kfac_init(const Network& net, double damping, double ema_decay) {
  KfacState st;
  st.damping = damping;
  st.ema_decay = ema_decay;
  for (const DenseLayer& layer : net.layers) {
    KfacLayer kl;
    const Eigen::Index da = layer.weights.cols();
    const Eigen::Index ds = layer.out_dim();
    kl.a = Matrix::Zero(da, da);
    kl.s = Matrix::Zero(ds, ds);
    kl.a_root = root_of_damped(kl.a, damping);
    kl.s_root = root_of_damped(kl.s, damping);
    kl.act_diag = Matrix::Zero(layer.is_output ? 0 : ds, 3);
    st.layers.push_back(std::move(kl));
  }
  return st;
}

void refresh_inverse_roots_inplace(KfacState& state, int layer) {
  KfacLayer& kl = state.layers.at(static_cast<std::size_t>(layer));
  kl.a_root = root_of_damped(kl.a, state.damping);
  kl.s_root = root_of_damped(kl.s, state.damping);
  ++state.refreshes;
}

KfacState refresh_inverse_roots(const KfacState& state, int layer) {
  KfacState out = state;
  refresh_inverse_roots_inplace(out, layer);
  out.drift = 0.0;
  for (int l = 0; l < static_cast<int>(out.layers.size()); ++l) out.drift = std::max(out.drift, layer_drift(out, l));
  return out;
}

double layer_drift(const KfacState& state, int layer) {
  const KfacLayer& kl = state.layers.at(static_cast<std::size_t>(layer));
  return std::max(damped_drift(kl.a_root, kl.a, state.damping),
                  damped_drift(kl.s_root, kl.s, state.damping));
}

KfacState kfac_update_from_batch(const KfacState& state, const CurvatureBatch& batch) {
  if (batch.a.size() != state.layers.size()) {
    throw Error(ErrorKind::ShapeMismatch, "curvature batch does not match state layers");
  }
  KfacState st = state;
  const double ema = st.ema_decay;
  const double n = static_cast<double>(std::max<Eigen::Index>(batch.n_examples, 1));
  st.drift = 0.0;
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    KfacLayer& kl = st.layers[l];
    const Matrix& a = batch.a[l];
    const Matrix& s = batch.s[l];
    if (a.cols() != kl.a.cols() || s.cols() != kl.s.cols()) {
      throw Error(ErrorKind::ShapeMismatch, "curvature batch layer width");
    }
    const Matrix a_batch = symmetrized(a.transpose() * a / n);
    const Matrix s_batch = symmetrized(s.transpose() * s / n);
    kl.a = symmetrized(ema * kl.a + (1.0 - ema) * a_batch);
    kl.s = symmetrized(ema * kl.s + (1.0 - ema) * s_batch);
    if (kl.act_diag.size() > 0) kl.act_diag = ema * kl.act_diag + (1.0 - ema) * batch.act_sq[l];

    const int li = static_cast<int>(l);
    if (ema > 0.0 && st.damping > 0.0) {
      const double row_scale = std::sqrt((1.0 - ema) / n);
      track_root(kl.a_root, a, row_scale, ema, st.damping);
      track_root(kl.s_root, s, row_scale, ema, st.damping);
      double d = layer_drift(st, li);
      if (!(d <= st.drift_threshold)) {
        refresh_inverse_roots_inplace(st, li);
        d = layer_drift(st, li);
      }
      st.drift = std::max(st.drift, d);
    } else {
      refresh_inverse_roots_inplace(st, li);
      st.drift = std::max(st.drift, layer_drift(st, li));
    }
  }
  ++st.updates;
  return st;
}

KfacState kfac_from_batch(const Network& net, const CurvatureBatch& batch, double damping) {
  KfacState st = kfac_init(net, damping, 0.0);
  return kfac_update_from_batch(st, batch);
}

Matrix kfac_apply_inverse(const KfacState& state, int layer, const Matrix& g) {
  const KfacLayer& kl = state.layers.at(static_cast<std::size_t>(layer));
  if (g.rows() != kl.s.rows() || g.cols() != kl.a.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "kfac_apply_inverse gradient shape");
  }
  return kl.s_root * (kl.s_root.transpose() * g * kl.a_root) * kl.a_root.transpose();
}

double layer_eta_kfac(const KfacState& state, int layer, const Matrix& weight_grad) {
  const KfacLayer& kl = state.layers.at(static_cast<std::size_t>(layer));
  if (weight_grad.rows() != kl.s.rows() || weight_grad.cols() != kl.a.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "layer_eta_kfac gradient shape");
  }
  return (kl.s_root.transpose() * weight_grad * kl.a_root).squaredNorm();
}

double activation_eta(const KfacState& state, int layer, const Matrix& activation_grad) {
  const KfacLayer& kl = state.layers.at(static_cast<std::size_t>(layer));
  if (activation_grad.size() == 0) return 0.0;
  if (activation_grad.rows() != kl.act_diag.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "activation_eta gradient shape");
  }
  double eta = 0.0;
  for (Eigen::Index i = 0; i < activation_grad.rows(); ++i) {
    for (Eigen::Index t = 0; t < 3; ++t) {
      const double denom = kl.act_diag(i, t) + state.damping;
      if (denom > 0.0) eta += activation_grad(i, t) * activation_grad(i, t) / denom;
    }
  }
  return eta;
}

}  // namespace senn
