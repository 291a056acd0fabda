#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <vector>

#include "senn/curvature.hpp"
#include "senn/network.hpp"
#include "senn/rng.hpp"

namespace senn {

enum class ProposalKind { width, depth };
enum class ProposalOptimizer { grad_ascent, mala };

struct Proposal {
  ProposalKind kind = ProposalKind::width;
  int location = 0;
  Matrix weights;  // width: k × (in + 1); depth: d × d
  std::vector<RationalParams> activations;
  double score = 0.0;      // decision score; depth scores are divided by layer_score_factor
  double realized = 0.0;   // Δη′ of the selected sample itself, same scaling as score
};

struct ExpansionConfig {
  double tau = 1.0;
  double alpha_stop = 0.0025;
  double layer_score_factor = 2.0;
  int n_width_proposals = 100;
  int n_depth_proposals = 100;
  ProposalOptimizer optimizer = ProposalOptimizer::grad_ascent;
  int opt_steps = 300;
  double opt_step_size = 0.3;
  double mala_temperature = 10.0;
  bool mala_argmax = false;
  int max_additions_per_event = 20;
  int max_depth_width = 64;  // depth positions wider than this are not proposed
  bool allow_width = true;
  bool allow_depth = true;
  double damping = 0.1;
  CurvatureMode curvature = CurvatureMode::kfac_moments;
  double proposal_jitter = 1e-8;
  double depth_logdet_weight = 0.01;
  double depth_clamp_ratio = 0.001;
};

// Exact gᵀF⁺g with F⁺ built from the SVD of J; singular values below 1e-10 σ_max
// are treated as zero, matching projection_score_oracle. Throws TooLarge.
double natural_expansion_score_exact(const Network& net, const Matrix& inputs,
                                     const Matrix& targets, TaskKind task);

// λ = (1/N) ‖g_y‖².
double lambda_bound(const Matrix& output_grads);

// g_r = g − E[g a_cᵀ](A_c + δI)⁻¹ a_c per example, with the inverse taken from `a_root`.
Matrix residual_gradient(const Matrix& preact_grads, const Matrix& layer_inputs, const Matrix& a_root);
Matrix residual_gradient(const Matrix& preact_grads, const Matrix& layer_inputs,
                         const KfacState& state, int layer);

// Δη′ = Tr[A_p⁻¹ E[a_p g_rᵀ] S⁻¹ E[g_r a_pᵀ]] with A_p jittered by `jitter`.
double delta_eta_lower_bound(const Matrix& a_p, const Matrix& g_r, const Matrix& s_inv,
                             double jitter = 1e-8);

// Scoring inputs for one location.
struct ScoringContext {
  Matrix features;  // width: batch × (in + 1) layer input; depth: batch × d non-bias features
  Matrix residual;  // batch × out of the receiving layer
  Matrix s_inv;     // (S + δI)⁻¹ of the receiving layer
  double eta_c = 0.0;
  double jitter = 1e-8;
};

// Δη′ of single-neuron candidates σ_θk(w_kᵀ x), vectorized over rows of `w`.
struct WidthEvaluation {
  Vector score;
  Matrix grad_w;      // K × (in + 1)
  Matrix grad_theta;  // K × 3
};
WidthEvaluation evaluate_width_candidates(const ScoringContext& ctx, const Matrix& w,
                                          const Matrix& theta, bool with_grad);

// Objective Δη′(σ_θ(F W_qᵀ)) − weight·(ln|det W_q|)² and its gradient.
struct DepthEvaluation {
  double score = 0.0;      // Δη′ only
  double objective = 0.0;  // Δη′ minus the log-determinant penalty
  Matrix grad_w;
  Matrix grad_theta;  // d × 3
};
DepthEvaluation evaluate_depth_candidate(const ScoringContext& ctx, const Matrix& w_q,
                                         const Matrix& theta, double logdet_weight, bool with_grad);

// Value and gradient of an objective over the rows of a K × D matrix of points.
using BatchObjective = std::function<void(const Matrix& points, Vector& value, Matrix* grad)>;

struct OptimizationTrace {
  Matrix points;
  Vector values;
  std::vector<double> best_history;  // best value after each step
};

// Per-row ascent; a row's step shrinks by 3 whenever its trial does not improve.
OptimizationTrace gradient_ascent(const BatchObjective& f, const Matrix& start, int steps,
                                  double step_size);

struct MalaResult {
  Matrix samples;
  Vector values;
  Vector weights;  // softmax(values / T)
  double expected_value = 0.0;
  double acceptance_rate = 0.0;
};

// MALA on log π(z) = f(z)/T − ½‖z‖², one chain per row. Step sizes adapt by a factor of 3
// every 10 steps when the window acceptance leaves [0.3, 0.9].
MalaResult mala_sample(const BatchObjective& f, const Matrix& start, double temperature, int steps,
                       double step_size, Rng& rng);

Proposal propose_width(const ScoringContext& ctx, int layer, const ExpansionConfig& config, Rng& rng);
Proposal propose_depth(const ScoringContext& ctx, int position, const ExpansionConfig& config, Rng& rng);

struct LocationScore {
  ProposalKind kind = ProposalKind::width;
  int location = 0;
  double eta_c = 0.0;
  double score = 0.0;
  bool eligible = false;
};

struct AcceptedAddition {
  ProposalKind kind = ProposalKind::width;
  int location = 0;
  int neurons = 0;
  double score = 0.0;
  double realized = 0.0;
  double eta_c = 0.0;
  double output_deviation = 0.0;
};

struct ScoreReport {
  std::vector<double> layer_eta;
  double activation_eta = 0.0;
  double eta_total = 0.0;
  double lambda = 0.0;
  std::vector<LocationScore> candidates;  // scored at the first iteration
  std::vector<AcceptedAddition> accepted;
  double theorem1_bound = 0.0;
  int iterations = 0;
};

nlohmann::json to_json(const ScoreReport& report);

// max(0, 1 + (ln λ − ln α)/ln(1 + τ)); +inf when α = 0.
double theorem1_bound(double lambda, double alpha, double tau);

// Scoring state for one batch: forward/backward, exact batch KFAC factors and per-layer η.
struct BatchAnalysis {
  ForwardTrace trace;
  Linearization lin;
  Gradients grads;
  KfacState state;
  std::vector<double> layer_eta;
  double activation_eta = 0.0;
  double lambda = 0.0;
  double loss = 0.0;
};

BatchAnalysis analyze_batch(const Network& net, const Matrix& inputs, const Matrix& targets,
                            TaskKind task, double damping, CurvatureMode mode, Rng* rng);

ScoringContext width_context(const BatchAnalysis& ba, int layer, double jitter);
ScoringContext depth_context(const BatchAnalysis& ba, int position, double jitter);

struct ExpansionResult {
  Network net;
  ScoreReport report;
};

// Repeatedly accepts the best eligible proposal until none passes τ and α.
// Throws Theorem1ViolationBug if the accepted count exceeds the bound.
ExpansionResult expansion_event(const Network& net, const Matrix& inputs, const Matrix& targets,
                                TaskKind task, const ExpansionConfig& config, std::uint64_t seed,
                                bool depth_allowed = true);

const char* proposal_kind_name(ProposalKind kind);

}  // namespace senn
