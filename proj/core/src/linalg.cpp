#include "senn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "senn/error.hpp"

namespace senn {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::LastNeuron: return "LastNeuron";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Theorem1ViolationBug: return "Theorem1ViolationBug";
    case ErrorKind::FunctionPreservationBug: return "FunctionPreservationBug";
  }
  return "Error";
}

namespace {

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " expects a square matrix");
  }
}

}  // namespace

Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

bool all_finite(const Matrix& a) { return a.allFinite(); }

Matrix cholesky(const Matrix& a) {
  require_square(a, "cholesky");
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  if (a.size() > 0 && (a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorKind::NotPositiveDefinite, "cholesky input is not symmetric");
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::NotPositiveDefinite, "non-positive pivot in cholesky");
  }
  Matrix l = llt.matrixL();
  return l;
}

Matrix inverse_root(const Matrix& a) {
  const Matrix l = cholesky(a);
  const Matrix eye = Matrix::Identity(a.rows(), a.cols());
  return l.transpose().triangularView<Eigen::Upper>().solve(eye);
}

Matrix spd_inverse(const Matrix& a) {
  const Matrix r = inverse_root(a);
  return symmetrized(r * r.transpose());
}

double inverse_root_drift(const Matrix& root, const Matrix& a) {
  if (a.size() == 0) return 0.0;
  const Matrix m = root.transpose() * a * root;
  return (m - Matrix::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff();
}

Matrix sherman_morrison(const Matrix& a_inv, const Vector& a) {
  require_square(a_inv, "sherman_morrison");
  if (a.size() != a_inv.rows()) throw Error(ErrorKind::ShapeMismatch, "sherman_morrison vector size");
  const Vector u = a_inv * a;
  const double denom = 1.0 + a.dot(u);
  Matrix out = a_inv - (u * u.transpose()) / denom;
  return symmetrized(out);
}

void rank_one_inverse_root_update_inplace(Matrix& root, const Vector& a) {
  if (a.size() != root.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "rank_one_inverse_root_update vector size");
  }
  const Vector u = root.transpose() * a;
  const double mu = u.squaredNorm();
  if (mu < 1e-14) return;
  // (sqrt(1 - mu/(1+mu)) - 1)/mu rewritten without cancellation.
  const double s = std::sqrt(1.0 + mu);
  const double coeff = -1.0 / (s * (1.0 + s));
  const Vector lu = root * u;
  root.noalias() += coeff * lu * u.transpose();
}

Matrix rank_one_inverse_root_update(const Matrix& root, const Vector& a) {
  Matrix out = root;
  rank_one_inverse_root_update_inplace(out, a);
  return out;
}

CgResult cg_solve(const LinearOperator& apply_a, const Vector& b, double damping, int max_iters,
                  double rel_tol) {
  CgResult res;
  res.x = Vector::Zero(b.size());
  Vector r = b;
  double rr = r.squaredNorm();
  const double target = rel_tol * b.norm();
  res.residual_norm = std::sqrt(rr);
  if (res.residual_norm <= target || b.size() == 0) return res;
  Vector p = r;
  for (int it = 0; it < max_iters; ++it) {
    Vector ap = apply_a(p);
    if (damping != 0.0) ap += damping * p;
    const double pap = p.dot(ap);
    if (!(pap > std::numeric_limits<double>::min()) || !std::isfinite(pap)) {
      throw Error(ErrorKind::NumericalBreakdown, "cg curvature denominator underflow");
    }
    const double step = rr / pap;
    res.x += step * p;
    r -= step * ap;
    const double rr_next = r.squaredNorm();
    res.iterations = it + 1;
    res.residual_norm = std::sqrt(rr_next);
    if (res.residual_norm <= target) break;
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return res;
}

double projection_score_oracle(const Matrix& jac, const Vector& g_y, int n_examples) {
  if (jac.rows() != g_y.size()) throw Error(ErrorKind::ShapeMismatch, "projection oracle rows");
  if (jac.size() == 0 || n_examples <= 0) return 0.0;
  Eigen::BDCSVD<Matrix> svd(jac, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0.0;
  const double cut = 1e-10 * sv(0);
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > cut) ++rank;
  const Vector coords = svd.matrixU().leftCols(rank).transpose() * g_y;
  return coords.squaredNorm() / n_examples;
}

LduQuadratic block_ldu_quadratic(const Matrix& a_c, const Matrix& c_cp, const Matrix& a_p,
                                 const Vector& v_c, const Vector& v_p) {
  const Eigen::Index nc = a_c.rows();
  const Eigen::Index np = a_p.rows();
  if (c_cp.rows() != nc || c_cp.cols() != np || v_c.size() != nc || v_p.size() != np) {
    throw Error(ErrorKind::ShapeMismatch, "block_ldu_quadratic block sizes");
  }
  Matrix joint(nc + np, nc + np);
  joint << a_c, c_cp, c_cp.transpose(), a_p;
  Vector v(nc + np);
  v << v_c, v_p;

  LduQuadratic out;
  const Matrix lj = cholesky(symmetrized(joint));
  const Vector wj = lj.triangularView<Eigen::Lower>().solve(v);
  out.lhs = wj.squaredNorm();

  const Matrix lc = cholesky(symmetrized(a_c));
  const Vector wc = lc.triangularView<Eigen::Lower>().solve(v_c);
  const Matrix x = lc.triangularView<Eigen::Lower>().solve(c_cp);  // L_c⁻¹ C
  const Matrix schur = symmetrized(a_p - x.transpose() * x);
  const Vector rv = v_p - x.transpose() * wc;
  const Matrix ls = cholesky(schur);
  const Vector ws = ls.triangularView<Eigen::Lower>().solve(rv);
  out.rhs = wc.squaredNorm() + ws.squaredNorm();
  return out;
}

}  // namespace senn
