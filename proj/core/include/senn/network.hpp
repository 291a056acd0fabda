#pragma once

#include <cstdint>
#include <vector>

#include "senn/linalg.hpp"
#include "senn/rational.hpp"
#include "senn/rng.hpp"

namespace senn {

enum class TaskKind { least_squares, softmax_cross_entropy };

struct DenseLayer {
  // out × (in + 1); the last column multiplies the constant-1 bias feature.
  Matrix weights;
  // One triple per row for hidden layers; empty for the output layer.
  std::vector<RationalParams> activations;
  bool is_output = false;

  Eigen::Index in_dim() const { return weights.cols() - 1; }
  Eigen::Index out_dim() const { return weights.rows(); }
};

struct Network {
  Eigen::Index input_dim = 0;
  std::vector<DenseLayer> layers;

  Eigen::Index output_dim() const { return layers.back().out_dim(); }
  int n_layers() const { return static_cast<int>(layers.size()); }
};

// Throws ShapeMismatch when the chaining invariant fails.
void validate_network(const Network& net);

// LeCun-normal weights, zero biases, unit-normal rational parameters.
Network make_network(Eigen::Index input_dim, const std::vector<int>& hidden, Eigen::Index output_dim,
                     Rng& rng);

std::vector<int> hidden_sizes(const Network& net);
Eigen::Index parameter_count(const Network& net);
// Offset of layer l's block in the canonical parameter enumeration.
Eigen::Index parameter_offset(const Network& net, int layer);
Vector flatten_parameters(const Network& net);
void assign_parameters(Network& net, const Vector& theta);

struct ForwardTrace {
  std::vector<Matrix> inputs;   // batch × (in + 1), bias column last
  std::vector<Matrix> preacts;  // batch × out
  Matrix outputs;

  Eigen::Index batch() const { return outputs.rows(); }
};

ForwardTrace forward(const Network& net, const Matrix& inputs);
Matrix predict(const Network& net, const Matrix& inputs);

// Per hidden layer: σ'(p) and ∂σ/∂(α, β, γ) at the recorded pre-activations.
struct Linearization {
  std::vector<Matrix> dsig;
  std::vector<Matrix> dalpha;
  std::vector<Matrix> dbeta;
  std::vector<Matrix> dgamma;
};

Linearization linearize(const Network& net, const ForwardTrace& trace);

struct Gradients {
  std::vector<Matrix> weights;      // mean over examples
  std::vector<Matrix> activations;  // out × 3, mean over examples
  std::vector<Matrix> preacts;      // g_l per example, batch × out
  std::vector<Matrix> hidden;       // dL/dh per example for hidden layers
};

Gradients backward(const Network& net, const ForwardTrace& trace, const Matrix& output_grads);
Gradients backward(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                   const Matrix& output_grads);
// Only preacts and hidden are filled.
Gradients backprop_signals(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                           const Matrix& output_grads);
Vector flatten_gradients(const Network& net, const Gradients& grads);

// Output perturbation (batch × d_out) along a parameter tangent.
Matrix jvp(const Network& net, const ForwardTrace& trace, const Linearization& lin,
           const Vector& tangent);
// Σ_n J_nᵀ c_n for a batch × d_out cotangent.
Vector vjp(const Network& net, const ForwardTrace& trace, const Linearization& lin,
           const Matrix& cotangent);

constexpr Eigen::Index kJacobianParamCap = 5000;

// Rows ordered (example, output); columns in canonical parameter order. Throws TooLarge.
Matrix jacobian(const Network& net, const Matrix& inputs);

struct LossResult {
  double loss = 0.0;
  Matrix output_grads;
};

LossResult compute_loss(const Matrix& outputs, const Matrix& targets, TaskKind task);
Matrix softmax_rows(const Matrix& logits);

// max |a − b| / max |a|, with 0/0 read as 0.
double relative_deviation(const Matrix& reference, const Matrix& other);

Matrix probe_inputs(Eigen::Index input_dim, Eigen::Index n, std::uint64_t seed);

// Appends rows w_p (k × (in+1)) to hidden layer `layer` and zero columns to the next layer.
// Outputs are unchanged bit-for-bit; checked on probe inputs.
Network add_width(const Network& net, int layer, const Matrix& w_p,
                  const std::vector<RationalParams>& activations);

// Splits transform `position` as (W W_q⁻¹) ∘ id ∘ W_q on the non-bias features.
// Throws SingularMatrix when σ_min(W_q) < 1e-6 · mean σ.
Network insert_layer(const Network& net, int position, const Matrix& w_q);

// Raises singular values to at least ratio · mean singular value, the mean taken after clamping.
Matrix clamp_singular_values(const Matrix& w, double ratio);

}  // namespace senn
