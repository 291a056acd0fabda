#pragma once

#include <Eigen/Dense>
#include <functional>

namespace senn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Lower-triangular L with L Lᵀ = a. Throws NotPositiveDefinite on a pivot <= 0.
Matrix cholesky(const Matrix& a);

// (A + a aᵀ)⁻¹ from A⁻¹.
Matrix sherman_morrison(const Matrix& a_inv, const Vector& a);

// Given L Lᵀ = A⁻¹, returns L' with L' L'ᵀ = (A + a aᵀ)⁻¹.
Matrix rank_one_inverse_root_update(const Matrix& root, const Vector& a);
void rank_one_inverse_root_update_inplace(Matrix& root, const Vector& a);

// R = L⁻ᵀ for L = cholesky(a), so R Rᵀ = a⁻¹.
Matrix inverse_root(const Matrix& a);

// max |Rᵀ a R − I|.
double inverse_root_drift(const Matrix& root, const Matrix& a);

Matrix spd_inverse(const Matrix& a);

using LinearOperator = std::function<Vector(const Vector&)>;

struct CgResult {
  Vector x;
  int iterations = 0;
  double residual_norm = 0.0;
};

// Solves (A + damping I) x = b. Stops when ‖r‖ <= rel_tol ‖b‖ or after max_iters.
CgResult cg_solve(const LinearOperator& apply_a, const Vector& b, double damping, int max_iters,
                  double rel_tol);

// (1/N) ‖P_J g_y‖² with singular values below 1e-10 σ_max dropped.
double projection_score_oracle(const Matrix& jac, const Vector& g_y, int n_examples);

struct LduQuadratic {
  double lhs = 0.0;
  double rhs = 0.0;
};

// vᵀ M⁻¹ v for the joint M = [[A_c, C],[Cᵀ, A_p]], directly and through the Schur complement.
LduQuadratic block_ldu_quadratic(const Matrix& a_c, const Matrix& c_cp, const Matrix& a_p,
                                 const Vector& v_c, const Vector& v_p);

Matrix symmetrized(const Matrix& a);
bool all_finite(const Matrix& a);

}  // namespace senn
