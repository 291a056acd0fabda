#include "senn/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "senn/error.hpp"

namespace senn {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// p = x Wᵀ summed feature by feature in column order. Appending zero-weight features
// anywhere before the last term leaves every partial sum, and so the result, unchanged.
Matrix ordered_affine(const Matrix& x, const Matrix& w) {
  Matrix p = Matrix::Zero(x.rows(), w.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    p.noalias() += x.col(j) * w.col(j).transpose();
  }
  return p;
}

Matrix with_bias(const Matrix& a) {
  Matrix x(a.rows(), a.cols() + 1);
  x.leftCols(a.cols()) = a;
  x.col(a.cols()).setOnes();
  return x;
}

Matrix apply_activations(const Matrix& p, const std::vector<RationalParams>& acts) {
  Matrix a(p.rows(), p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const RationalParams& th = acts[static_cast<std::size_t>(j)];
    for (Eigen::Index n = 0; n < p.rows(); ++n) a(n, j) = rational_eval(th, p(n, j));
  }
  return a;
}

Eigen::Index layer_param_count(const DenseLayer& layer) {
  return layer.weights.size() + 3 * static_cast<Eigen::Index>(layer.activations.size());
}

// Shared reverse pass; weight and activation gradients are scaled by `scale`.
Gradients backward_impl(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                        const Matrix& output_grads, double scale, bool with_params = true) {
  const int n_layers = net.n_layers();
  if (output_grads.rows() != trace.batch() || output_grads.cols() != net.output_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "backward output gradient shape");
  }
  Gradients grads;
  grads.weights.resize(n_layers);
  grads.activations.resize(n_layers);
  grads.preacts.resize(n_layers);
  grads.hidden.resize(n_layers);
  Matrix g = output_grads;
  for (int l = n_layers - 1; l >= 0; --l) {
    const DenseLayer& layer = net.layers[l];
    if (with_params) {
      grads.weights[l].noalias() = scale * (g.transpose() * trace.inputs[l]);
      if (grads.activations[l].size() == 0) grads.activations[l] = Matrix::Zero(layer.out_dim(), 3);
    }
    if (l > 0) {
      Matrix dh = g * layer.weights.leftCols(layer.in_dim());
      const int prev = l - 1;
      if (with_params) {
        Matrix act(dh.cols(), 3);
        act.col(0) = scale * dh.cwiseProduct(lin.dalpha[prev]).colwise().sum().transpose();
        act.col(1) = scale * dh.cwiseProduct(lin.dbeta[prev]).colwise().sum().transpose();
        act.col(2) = scale * dh.cwiseProduct(lin.dgamma[prev]).colwise().sum().transpose();
        grads.activations[prev] = std::move(act);
      }
      Matrix g_prev = dh.cwiseProduct(lin.dsig[prev]);
      grads.hidden[prev] = std::move(dh);
      grads.preacts[l] = std::move(g);
      g = std::move(g_prev);
    } else {
      grads.preacts[l] = std::move(g);
    }
  }
  if (with_params) grads.activations[n_layers - 1] = Matrix::Zero(0, 3);
  return grads;
}

}  // namespace

void validate_network(const Network& net) {
  if (net.layers.empty()) throw Error(ErrorKind::ShapeMismatch, "network has no layers");
  Eigen::Index in = net.input_dim;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& layer = net.layers[l];
    const bool last = l + 1 == net.layers.size();
    if (layer.weights.cols() != in + 1) {
      throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " expects " +
                                                std::to_string(in + 1) + " input columns, has " +
                                                std::to_string(layer.weights.cols()));
    }
    if (layer.is_output != last) {
      throw Error(ErrorKind::ShapeMismatch, "only the last layer may be the output layer");
    }
    const std::size_t n_acts = last ? 0 : static_cast<std::size_t>(layer.out_dim());
    if (layer.activations.size() != n_acts) {
      throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " activation count");
    }
    in = layer.out_dim();
  }
}

Network make_network(Eigen::Index input_dim, const std::vector<int>& hidden, Eigen::Index output_dim,
                     Rng& rng) {
  Network net;
  net.input_dim = input_dim;
  Eigen::Index in = input_dim;
  std::vector<Eigen::Index> widths(hidden.begin(), hidden.end());
  widths.push_back(output_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    DenseLayer layer;
    const Eigen::Index out = widths[l];
    layer.weights = Matrix::Zero(out, in + 1);
    layer.weights.leftCols(in) = rng.normal_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)));
    layer.is_output = l + 1 == widths.size();
    if (!layer.is_output) {
      for (Eigen::Index j = 0; j < out; ++j) {
        layer.activations.push_back({rng.normal(), rng.normal(), rng.normal()});
      }
    }
    net.layers.push_back(std::move(layer));
    in = out;
  }
  validate_network(net);
  return net;
}

std::vector<int> hidden_sizes(const Network& net) {
  std::vector<int> out;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    out.push_back(static_cast<int>(net.layers[l].out_dim()));
  }
  return out;
}

Eigen::Index parameter_count(const Network& net) {
  Eigen::Index n = 0;
  for (const DenseLayer& layer : net.layers) n += layer_param_count(layer);
  return n;
}

Eigen::Index parameter_offset(const Network& net, int layer) {
  Eigen::Index n = 0;
  for (int l = 0; l < layer; ++l) n += layer_param_count(net.layers[l]);
  return n;
}

Vector flatten_parameters(const Network& net) {
  Vector theta(parameter_count(net));
  Eigen::Index off = 0;
  for (const DenseLayer& layer : net.layers) {
    const Eigen::Index sz = layer.weights.size();
    Eigen::Map<RowMajorMatrix>(theta.data() + off, layer.out_dim(), layer.weights.cols()) =
        layer.weights;
    off += sz;
    for (const RationalParams& th : layer.activations) {
      theta(off++) = th.alpha;
      theta(off++) = th.beta;
      theta(off++) = th.gamma;
    }
  }
  return theta;
}

void assign_parameters(Network& net, const Vector& theta) {
  if (theta.size() != parameter_count(net)) {
    throw Error(ErrorKind::ShapeMismatch, "parameter vector length");
  }
  Eigen::Index off = 0;
  for (DenseLayer& layer : net.layers) {
    layer.weights = Eigen::Map<const RowMajorMatrix>(theta.data() + off, layer.out_dim(),
                                                     layer.weights.cols());
    off += layer.weights.size();
    for (RationalParams& th : layer.activations) {
      th.alpha = theta(off++);
      th.beta = theta(off++);
      th.gamma = theta(off++);
    }
  }
}

ForwardTrace forward(const Network& net, const Matrix& inputs) {
  validate_network(net);
  if (inputs.cols() != net.input_dim) {
    throw Error(ErrorKind::ShapeMismatch, "forward expects " + std::to_string(net.input_dim) +
                                              " input columns, got " + std::to_string(inputs.cols()));
  }
  ForwardTrace trace;
  trace.inputs.reserve(net.layers.size());
  trace.preacts.reserve(net.layers.size());
  Matrix a = inputs;
  for (const DenseLayer& layer : net.layers) {
    Matrix x = with_bias(a);
    Matrix p = ordered_affine(x, layer.weights);
    trace.inputs.push_back(std::move(x));
    if (layer.is_output) {
      trace.outputs = p;
    } else {
      a = apply_activations(p, layer.activations);
    }
    trace.preacts.push_back(std::move(p));
  }
  return trace;
}

Matrix predict(const Network& net, const Matrix& inputs) { return forward(net, inputs).outputs; }

Linearization linearize(const Network& net, const ForwardTrace& trace) {
  Linearization lin;
  const int n_hidden = net.n_layers() - 1;
  lin.dsig.resize(n_hidden);
  lin.dalpha.resize(n_hidden);
  lin.dbeta.resize(n_hidden);
  lin.dgamma.resize(n_hidden);
  for (int l = 0; l < n_hidden; ++l) {
    const Matrix& p = trace.preacts[l];
    Matrix ds(p.rows(), p.cols()), db(p.rows(), p.cols()), dg(p.rows(), p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const RationalParams& th = net.layers[l].activations[static_cast<std::size_t>(j)];
      for (Eigen::Index n = 0; n < p.rows(); ++n) {
        const double x = p(n, j);
        const double q = 1.0 + x * x;
        ds(n, j) = rational_dx(th, x);
        db(n, j) = 1.0 / q;
        dg(n, j) = x / q;
      }
    }
    lin.dsig[l] = std::move(ds);
    lin.dalpha[l] = p;
    lin.dbeta[l] = std::move(db);
    lin.dgamma[l] = std::move(dg);
  }
  return lin;
}

Gradients backward(const Network& net, const ForwardTrace& trace, const Matrix& output_grads) {
  return backward(net, trace, linearize(net, trace), output_grads);
}

Gradients backward(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                   const Matrix& output_grads) {
  const double n = static_cast<double>(std::max<Eigen::Index>(trace.batch(), 1));
  return backward_impl(net, trace, lin, output_grads, 1.0 / n);
}

Gradients backprop_signals(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                           const Matrix& output_grads) {
  return backward_impl(net, trace, lin, output_grads, 1.0, false);
}

Vector flatten_gradients(const Network& net, const Gradients& grads) {
  Vector out(parameter_count(net));
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Matrix& gw = grads.weights[l];
    Eigen::Map<RowMajorMatrix>(out.data() + off, gw.rows(), gw.cols()) = gw;
    off += gw.size();
    const Matrix& ga = grads.activations[l];
    for (Eigen::Index j = 0; j < ga.rows(); ++j) {
      for (int t = 0; t < 3; ++t) out(off++) = ga(j, t);
    }
  }
  return out;
}

Matrix jvp(const Network& net, const ForwardTrace& trace, const Linearization& lin,
           const Vector& tangent) {
  if (tangent.size() != parameter_count(net)) throw Error(ErrorKind::ShapeMismatch, "jvp tangent");
  Eigen::Index off = 0;
  Matrix da;
  Matrix dp;
  for (int l = 0; l < net.n_layers(); ++l) {
    const DenseLayer& layer = net.layers[l];
    Eigen::Map<const RowMajorMatrix> dw(tangent.data() + off, layer.out_dim(), layer.weights.cols());
    off += layer.weights.size();
    dp.noalias() = trace.inputs[l] * dw.transpose();
    if (l > 0) dp.noalias() += da * layer.weights.leftCols(layer.in_dim()).transpose();
    if (layer.is_output) break;
    da = lin.dsig[l].cwiseProduct(dp);
    for (Eigen::Index j = 0; j < layer.out_dim(); ++j) {
      const double ta = tangent(off++), tb = tangent(off++), tg = tangent(off++);
      da.col(j) += ta * lin.dalpha[l].col(j) + tb * lin.dbeta[l].col(j) + tg * lin.dgamma[l].col(j);
    }
  }
  return dp;
}

Vector vjp(const Network& net, const ForwardTrace& trace, const Linearization& lin,
           const Matrix& cotangent) {
  return flatten_gradients(net, backward_impl(net, trace, lin, cotangent, 1.0));
}

Matrix jacobian(const Network& net, const Matrix& inputs) {
  const Eigen::Index n_params = parameter_count(net);
  if (n_params > kJacobianParamCap) {
    throw Error(ErrorKind::TooLarge, "jacobian limited to " + std::to_string(kJacobianParamCap) +
                                         " parameters, network has " + std::to_string(n_params));
  }
  const ForwardTrace trace = forward(net, inputs);
  const Linearization lin = linearize(net, trace);
  const Eigen::Index n = trace.batch();
  const Eigen::Index d_out = net.output_dim();
  Matrix jac = Matrix::Zero(n * d_out, n_params);
  for (Eigen::Index k = 0; k < d_out; ++k) {
    Matrix seed = Matrix::Zero(n, d_out);
    seed.col(k).setOnes();
    const Gradients gr = backward_impl(net, trace, lin, seed, 1.0);
    Eigen::Index off = 0;
    for (int l = 0; l < net.n_layers(); ++l) {
      const DenseLayer& layer = net.layers[l];
      const Matrix& g = gr.preacts[l];
      const Matrix& x = trace.inputs[l];
      const Eigen::Index cols = layer.weights.cols();
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index row = i * d_out + k;
        for (Eigen::Index o = 0; o < layer.out_dim(); ++o) {
          for (Eigen::Index j = 0; j < cols; ++j) jac(row, off + o * cols + j) = g(i, o) * x(i, j);
        }
      }
      off += layer.weights.size();
      if (!layer.is_output) {
        const Matrix& dh = gr.hidden[l];
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Index row = i * d_out + k;
          for (Eigen::Index o = 0; o < layer.out_dim(); ++o) {
            jac(row, off + 3 * o + 0) = dh(i, o) * lin.dalpha[l](i, o);
            jac(row, off + 3 * o + 1) = dh(i, o) * lin.dbeta[l](i, o);
            jac(row, off + 3 * o + 2) = dh(i, o) * lin.dgamma[l](i, o);
          }
        }
        off += 3 * layer.out_dim();
      }
    }
  }
  return jac;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    const double m = logits.row(n).maxCoeff();
    p.row(n) = (logits.row(n).array() - m).exp().matrix();
    p.row(n) /= p.row(n).sum();
  }
  return p;
}

LossResult compute_loss(const Matrix& outputs, const Matrix& targets, TaskKind task) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "loss output/target shapes differ");
  }
  LossResult res;
  const double n = static_cast<double>(std::max<Eigen::Index>(outputs.rows(), 1));
  if (task == TaskKind::least_squares) {
    res.output_grads = outputs - targets;
    res.loss = 0.5 * res.output_grads.squaredNorm() / n;
    return res;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    const double m = outputs.row(i).maxCoeff();
    const double lse = m + std::log((outputs.row(i).array() - m).exp().sum());
    total += (targets.row(i).array() * (lse - outputs.row(i).array())).sum();
  }
  res.loss = total / n;
  res.output_grads = softmax_rows(outputs) - targets;
  return res;
}

double relative_deviation(const Matrix& reference, const Matrix& other) {
  if (reference.rows() != other.rows() || reference.cols() != other.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "relative_deviation shapes");
  }
  if (reference.size() == 0) return 0.0;
  const double diff = (reference - other).cwiseAbs().maxCoeff();
  if (diff == 0.0) return 0.0;
  return diff / std::max(reference.cwiseAbs().maxCoeff(), 1e-300);
}

Matrix probe_inputs(Eigen::Index input_dim, Eigen::Index n, std::uint64_t seed) {
  Rng rng(stream_seed(seed, {0x70726f6265ULL}));
  return rng.normal_matrix(n, input_dim);
}

Network add_width(const Network& net, int layer, const Matrix& w_p,
                  const std::vector<RationalParams>& activations) {
  validate_network(net);
  if (layer < 0 || layer + 1 >= net.n_layers()) {
    throw Error(ErrorKind::IndexOutOfRange, "add_width target must be a hidden layer");
  }
  const DenseLayer& target = net.layers[layer];
  if (w_p.cols() != target.weights.cols() ||
      static_cast<std::size_t>(w_p.rows()) != activations.size()) {
    throw Error(ErrorKind::ShapeMismatch, "add_width proposal shape");
  }
  if (w_p.rows() == 0) return net;
  const Eigen::Index k = w_p.rows();

  Network out = net;
  DenseLayer& grown = out.layers[layer];
  Matrix w(grown.out_dim() + k, grown.weights.cols());
  w << grown.weights, w_p;
  grown.weights = std::move(w);
  grown.activations.insert(grown.activations.end(), activations.begin(), activations.end());

  DenseLayer& next = out.layers[layer + 1];
  const Eigen::Index feat = next.in_dim();
  Matrix wn = Matrix::Zero(next.out_dim(), feat + k + 1);
  wn.leftCols(feat) = next.weights.leftCols(feat);
  wn.col(feat + k) = next.weights.col(feat);
  next.weights = std::move(wn);
  validate_network(out);

  const Matrix probes = probe_inputs(net.input_dim, 16, 0x5eedULL);
  if (predict(out, probes) != predict(net, probes)) {
    throw Error(ErrorKind::FunctionPreservationBug, "width addition changed network outputs");
  }
  return out;
}

Matrix clamp_singular_values(const Matrix& w, double ratio) {
  if (w.size() == 0) return w;
  Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector s = svd.singularValues();
  // The floor must hold against the mean after clamping: f = ratio · mean(max(s, f)).
  // Iterating contracts by at least `ratio`, so a few rounds reach the fixed point.
  double floor = ratio * s.mean();
  for (int it = 0; it < 100; ++it) {
    const double next = ratio * s.cwiseMax(floor).mean();
    if (next <= floor) break;
    floor = next;
  }
  s = s.cwiseMax(floor);
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

Network insert_layer(const Network& net, int position, const Matrix& w_q) {
  validate_network(net);
  if (position < 0 || position >= net.n_layers()) {
    throw Error(ErrorKind::IndexOutOfRange, "insert_layer position");
  }
  const DenseLayer& split = net.layers[position];
  const Eigen::Index d = split.in_dim();
  if (w_q.rows() != d || w_q.cols() != d) {
    throw Error(ErrorKind::ShapeMismatch, "insert_layer expects a " + std::to_string(d) + "x" +
                                              std::to_string(d) + " transform");
  }
  const Vector sv = Eigen::JacobiSVD<Matrix>(w_q).singularValues();
  if (!(sv.minCoeff() >= 1e-6 * sv.mean()) || sv.mean() == 0.0) {
    throw Error(ErrorKind::SingularMatrix, "inserted transform is ill-conditioned");
  }

  DenseLayer fresh;
  fresh.weights = Matrix::Zero(d, d + 1);
  fresh.weights.leftCols(d) = w_q;
  fresh.activations.assign(static_cast<std::size_t>(d), RationalParams::identity());
  fresh.is_output = false;

  Network out = net;
  DenseLayer& down = out.layers[position];
  const Matrix wf = split.weights.leftCols(d);
  down.weights.leftCols(d) = w_q.transpose().partialPivLu().solve(wf.transpose()).transpose();
  out.layers.insert(out.layers.begin() + position, std::move(fresh));
  validate_network(out);

  const Matrix probes = probe_inputs(net.input_dim, 100, 0x5eedULL);
  const double dev = relative_deviation(predict(net, probes), predict(out, probes));
  if (!(dev <= 1e-8)) {
    throw Error(ErrorKind::FunctionPreservationBug,
                "layer insertion changed outputs by " + std::to_string(dev) + " relative");
  }
  return out;
}

}  // namespace senn
