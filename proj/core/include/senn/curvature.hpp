#pragma once

#include <vector>

#include "senn/linalg.hpp"
#include "senn/network.hpp"
#include "senn/rng.hpp"

namespace senn {

enum class CurvatureMode { exact_fisher, kfac_moments, kfac_ubah };

// F = (1/N) Jᵀ J under the Euclidean output metric. Throws TooLarge.
Matrix exact_fisher(const Network& net, const Matrix& inputs);

struct KfacLayer {
  Matrix a;        // E[x xᵀ], bias feature included
  Matrix s;        // E[u uᵀ] of pre-activation covectors
  Matrix a_root;   // a_root a_rootᵀ ≈ (a + δI)⁻¹
  Matrix s_root;
  Matrix act_diag; // out × 3 diagonal curvature of (α, β, γ); empty for the output layer
};

struct KfacState {
  std::vector<KfacLayer> layers;
  double damping = 0.1;
  double ema_decay = 0.95;
  double drift = 0.0;
  double drift_threshold = 0.01;
  long updates = 0;
  long refreshes = 0;
};

// Per-layer samples from one batch. A = aᵀa / n_examples, S = sᵀs / n_examples.
struct CurvatureBatch {
  std::vector<Matrix> a;
  std::vector<Matrix> s;
  std::vector<Matrix> act_sq;  // out × 3 mean squared activation-parameter covectors
  Eigen::Index n_examples = 0;
};

struct UbahSample {
  std::vector<Matrix> u;  // per layer, batch × out pre-activation covectors
  std::vector<Matrix> act;  // per hidden layer, out × 3 squared activation-parameter covectors summed over the batch
  Matrix input_covector;  // batch × input_dim
};

// One draw per example: output seeded with L ξ (L Lᵀ = loss Hessian), and ζ_i with variance
// |g_i σ″(p_i)| added to each hidden pre-activation covector when `activation_noise` is set.
// `signals` may carry backprop_signals of the loss gradient to skip recomputing them.
UbahSample ubah_sample(const Network& net, const ForwardTrace& trace, const Linearization& lin,
                       const Matrix& targets, TaskKind task, Rng& rng, bool activation_noise = true,
                       const Gradients* signals = nullptr);

// kfac_moments: one deterministic backprop per output unit. kfac_ubah: one ubah draw per example.
CurvatureBatch curvature_batch(const Network& net, const ForwardTrace& trace,
                               const Linearization& lin, const Matrix& targets, TaskKind task,
                               CurvatureMode mode, Rng* rng);

KfacState kfac_init(const Network& net, double damping, double ema_decay);

KfacState kfac_update_from_batch(const KfacState& state, const CurvatureBatch& batch);

// Exact batch factors with fresh Cholesky roots.
KfacState kfac_from_batch(const Network& net, const CurvatureBatch& batch, double damping);

KfacState refresh_inverse_roots(const KfacState& state, int layer);
void refresh_inverse_roots_inplace(KfacState& state, int layer);

double layer_drift(const KfacState& state, int layer);

// (S + δI)⁻¹ G (A + δI)⁻¹ through the stored roots.
Matrix kfac_apply_inverse(const KfacState& state, int layer, const Matrix& g);

// Tr[(S + δI)⁻¹ ∂W (A + δI)⁻¹ ∂Wᵀ].
double layer_eta_kfac(const KfacState& state, int layer, const Matrix& weight_grad);

// Σ grad² / (diag + δ) over a hidden layer's activation parameters.
double activation_eta(const KfacState& state, int layer, const Matrix& activation_grad);

}  // namespace senn
