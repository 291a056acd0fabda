#include <gtest/gtest.h>

#include <cmath>

#include "senn/error.hpp"
#include "senn/linalg.hpp"
#include "senn/rng.hpp"

namespace senn {
namespace {

Matrix random_spd(Eigen::Index d, Rng& rng) {
  const Matrix m = rng.normal_matrix(d, d);
  return m.transpose() * m + Matrix::Identity(d, d);
}

double rel_fro(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

TEST(Cholesky, IdentityAndDiagonal) {
  EXPECT_TRUE(cholesky(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3)));
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 4.0, 9.0;
  Matrix expect = Matrix::Zero(2, 2);
  expect.diagonal() << 2.0, 3.0;
  EXPECT_EQ(cholesky(d), expect);
}

TEST(Cholesky, ReconstructsRandomSpd) {
  Rng rng(1);
  const Matrix a = random_spd(8, rng);
  const Matrix l = cholesky(a);
  EXPECT_TRUE(l.isLowerTriangular());
  EXPECT_LT(rel_fro(l * l.transpose(), a), 1e-12);
}

TEST(Cholesky, RejectsIndefinite) {
  Matrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  try {
    cholesky(a);
    FAIL() << "expected NotPositiveDefinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotPositiveDefinite);
  }
}

TEST(ShermanMorrison, ZeroUpdateAndUnitVector) {
  EXPECT_EQ(sherman_morrison(Matrix::Identity(3, 3), Vector::Zero(3)), Matrix::Identity(3, 3));
  Matrix expect = Matrix::Identity(2, 2);
  expect(0, 0) = 0.5;
  EXPECT_LT((sherman_morrison(Matrix::Identity(2, 2), Vector::Unit(2, 0)) - expect).norm(), 1e-15);
}

TEST(ShermanMorrison, MatchesDenseInverse) {
  Rng rng(2);
  for (int it = 0; it < 50; ++it) {
    const Matrix a = random_spd(6, rng);
    const Vector v = rng.normal_vector(6);
    const Matrix got = sherman_morrison(a.inverse(), v);
    const Matrix dense = (a + v * v.transpose()).inverse();
    EXPECT_LT(rel_fro(got, dense), 1e-10);
    EXPECT_LT((got * (a + v * v.transpose()) - Matrix::Identity(6, 6)).norm(), 1e-9);
    EXPECT_EQ(got, got.transpose());
  }
}

TEST(RankOneRoot, ZeroUpdateIsNoop) {
  Rng rng(3);
  const Matrix l = rng.normal_matrix(4, 4);
  EXPECT_EQ(rank_one_inverse_root_update(l, Vector::Zero(4)), l);
}

TEST(RankOneRoot, UnitVectorWorkedExample) {
  const Matrix lp = rank_one_inverse_root_update(Matrix::Identity(2, 2), Vector::Unit(2, 0));
  Matrix expect = Matrix::Identity(2, 2);
  expect(0, 0) = 1.0 / std::sqrt(2.0);
  EXPECT_LT((lp - expect).norm(), 1e-15);
  const Matrix sm = sherman_morrison(Matrix::Identity(2, 2), Vector::Unit(2, 0));
  EXPECT_LT((lp * lp.transpose() - sm).norm(), 1e-15);
}

TEST(RankOneRoot, TwoHundredSequentialUpdates) {
  Rng rng(4);
  const Eigen::Index d = 10;
  Matrix l = Matrix::Identity(d, d);
  Matrix b = Matrix::Identity(d, d);
  for (int i = 0; i < 200; ++i) {
    const Vector a = rng.normal_vector(d, 0.3);
    l = rank_one_inverse_root_update(l, a);
    b += a * a.transpose();
  }
  const Matrix dense = b.inverse();
  EXPECT_LT(rel_fro(l * l.transpose(), dense), 1e-8);
}

TEST(RankOneRoot, InverseIdentityProperty) {
  Rng rng(5);
  for (int it = 0; it < 100; ++it) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.next() % 7);
    const Matrix l = rng.normal_matrix(d, d) + 3.0 * Matrix::Identity(d, d);
    const Vector a = rng.normal_vector(d);
    const Matrix lp = rank_one_inverse_root_update(l, a);
    const Matrix a_mat = (l * l.transpose()).inverse() + a * a.transpose();
    EXPECT_LT((lp * lp.transpose() * a_mat - Matrix::Identity(d, d)).norm(), 1e-9);
    Matrix inplace = l;
    rank_one_inverse_root_update_inplace(inplace, a);
    EXPECT_LT((inplace - lp).norm(), 1e-12 * lp.norm());
  }
}

TEST(InverseRoot, DriftIsZeroForFreshRoot) {
  Rng rng(6);
  const Matrix a = random_spd(5, rng);
  const Matrix r = inverse_root(a);
  EXPECT_LT((r * r.transpose() - a.inverse()).norm(), 1e-10 * a.inverse().norm());
  EXPECT_LT(inverse_root_drift(r, a), 1e-12);
}

TEST(CgSolve, IdentityOneIteration) {
  const Vector b = (Vector(4) << 1.0, -2.0, 3.0, 0.5).finished();
  const CgResult r = cg_solve([](const Vector& v) { return v; }, b, 0.0, 10, 1e-12);
  EXPECT_LE(r.iterations, 1);
  EXPECT_LT((r.x - b).norm(), 1e-14);
}

TEST(CgSolve, DiagonalExactInFiveIterations) {
  const Vector diag = Vector::LinSpaced(5, 1.0, 5.0);
  const CgResult r = cg_solve([&](const Vector& v) { return Vector(diag.cwiseProduct(v)); },
                              Vector::Ones(5), 0.0, 5, 0.0);
  EXPECT_LE(r.iterations, 5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(r.x(i), 1.0 / (i + 1), 1e-12);
}

TEST(CgSolve, DampedRandomSystemMatchesDense) {
  Rng rng(7);
  const Matrix a = random_spd(30, rng) - Matrix::Identity(30, 30);  // PSD
  const Vector b = rng.normal_vector(30);
  const CgResult r = cg_solve([&](const Vector& v) { return Vector(a * v); }, b, 0.1, 200, 1e-14);
  const Vector dense = (a + 0.1 * Matrix::Identity(30, 30)).ldlt().solve(b);
  EXPECT_LT((r.x - dense).norm() / dense.norm(), 1e-8);
}

TEST(CgSolve, UndampedUpToFifty) {
  Rng rng(8);
  for (Eigen::Index d : {5, 20, 50}) {
    const Matrix a = random_spd(d, rng);
    const Vector b = rng.normal_vector(d);
    const CgResult r = cg_solve([&](const Vector& v) { return Vector(a * v); }, b, 0.0,
                                static_cast<int>(d) * 4, 1e-15);
    const Vector dense = a.ldlt().solve(b);
    EXPECT_LT((r.x - dense).norm() / dense.norm(), 1e-8) << "d = " << d;
  }
}

TEST(CgSolve, BreakdownOnIndefiniteOperator) {
  const Vector b = (Vector(2) << 1.0, 1.0).finished();
  try {
    cg_solve([](const Vector& v) { return Vector((Vector(2) << v(0), -v(1)).finished()); }, b, 0.0, 10, 1e-12);
    FAIL() << "expected NumericalBreakdown";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NumericalBreakdown);
  }
}

TEST(ProjectionOracle, ZeroJacobian) {
  EXPECT_EQ(projection_score_oracle(Matrix::Zero(4, 3), Vector::Ones(4), 4), 0.0);
}

TEST(ProjectionOracle, OrthogonalFullProjection) {
  Rng rng(9);
  const Matrix q = rng.normal_matrix(5, 5).householderQr().householderQ();
  const Vector g = rng.normal_vector(5);
  EXPECT_NEAR(projection_score_oracle(q, g, 1), g.squaredNorm(), 1e-12 * g.squaredNorm());
}

TEST(ProjectionOracle, MatchesLeastSquaresOnRankDeficient) {
  Rng rng(10);
  for (int it = 0; it < 20; ++it) {
    const Matrix j = rng.normal_matrix(12, 3) * rng.normal_matrix(3, 7);  // rank 3
    const Vector g = rng.normal_vector(12);
    // Least-squares oracle: g = Jt* + r with r ⟂ range(J); projection = ‖Jt*‖².
    const Vector t = j.completeOrthogonalDecomposition().solve(g);
    const double expect = (j * t).squaredNorm() / 4.0;
    EXPECT_NEAR(projection_score_oracle(j, g, 4), expect, 1e-10 * expect);
  }
}

TEST(ProjectionOracle, MonotoneUnderColumnAugmentation) {
  Rng rng(11);
  for (int it = 0; it < 200; ++it) {
    const Eigen::Index rows = 4 + static_cast<Eigen::Index>(rng.next() % 10);
    const Eigen::Index cols = 1 + static_cast<Eigen::Index>(rng.next() % 8);
    const Matrix j = rng.normal_matrix(rows, cols);
    Matrix aug(rows, cols + 2);
    aug << j, rng.normal_matrix(rows, 2);
    const Vector g = rng.normal_vector(rows);
    EXPECT_GE(projection_score_oracle(aug, g, 3), projection_score_oracle(j, g, 3) - 1e-12);
  }
}

TEST(BlockLdu, BlockDiagonalSplits) {
  Rng rng(12);
  const Matrix a_c = random_spd(3, rng);
  const Matrix a_p = random_spd(2, rng);
  const Vector v_c = rng.normal_vector(3);
  const Vector v_p = rng.normal_vector(2);
  const LduQuadratic q = block_ldu_quadratic(a_c, Matrix::Zero(3, 2), a_p, v_c, v_p);
  const double split = v_c.dot(a_c.ldlt().solve(v_c)) + v_p.dot(a_p.ldlt().solve(v_p));
  EXPECT_NEAR(q.lhs, q.rhs, 1e-12 * q.lhs);
  EXPECT_NEAR(q.lhs, split, 1e-12 * split);
}

TEST(BlockLdu, FullyPredictedResidualVanishes) {
  Rng rng(13);
  const Matrix m = rng.normal_matrix(20, 5);
  const Matrix joint = m.transpose() * m;
  const Matrix a_c = joint.topLeftCorner(3, 3);
  const Matrix c = joint.topRightCorner(3, 2);
  const Matrix a_p = joint.bottomRightCorner(2, 2);
  const Vector v_c = rng.normal_vector(3);
  const Vector v_p = c.transpose() * a_c.ldlt().solve(v_c);
  const LduQuadratic q = block_ldu_quadratic(a_c, c, a_p, v_c, v_p);
  const double base = v_c.dot(a_c.ldlt().solve(v_c));
  EXPECT_NEAR(q.lhs, base, 1e-10 * base);
  EXPECT_NEAR(q.rhs, base, 1e-10 * base);
}

TEST(BlockLdu, RandomBlocksAgree) {
  Rng rng(14);
  for (int it = 0; it < 50; ++it) {
    const Matrix joint = random_spd(10, rng);
    const Vector v = rng.normal_vector(10);
    const LduQuadratic q = block_ldu_quadratic(joint.topLeftCorner(6, 6), joint.topRightCorner(6, 4),
                                               joint.bottomRightCorner(4, 4), v.head(6), v.tail(4));
    const double dense = v.dot(joint.inverse() * v);
    EXPECT_LT(std::abs(q.lhs - q.rhs), 1e-10 * std::abs(q.lhs));
    EXPECT_NEAR(q.lhs, dense, 1e-10 * dense);
  }
}

}  // namespace
}  // namespace senn
