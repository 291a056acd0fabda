#include <gtest/gtest.h>

#include <cmath>

#include "senn/datasets.hpp"
#include "senn/error.hpp"
#include "senn/expansion.hpp"
#include "senn/trainer.hpp"
#include "senn/verification.hpp"

namespace senn {
namespace {

Matrix with_bias(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out << x, Vector::Ones(x.rows());
  return out;
}

// Component of m orthogonal to the columns of x.
Matrix orthogonal_part(const Matrix& m, const Matrix& x) {
  return m - x * x.colPivHouseholderQr().solve(m);
}

// ---- MALA ----

TEST(Mala, PriorOnlyMatchesUnitNormal) {
  Rng rng(1);
  const BatchObjective zero = [](const Matrix& pts, Vector& v, Matrix* g) {
    v = Vector::Zero(pts.rows());
    if (g) *g = Matrix::Zero(pts.rows(), pts.cols());
  };
  Matrix start(10000, 2);
  start.col(0).setConstant(2.0);
  start.col(1).setConstant(-1.0);
  const MalaResult r = mala_sample(zero, start, 1.0, 300, 0.3, rng);
  const Vector mean = r.samples.colwise().mean().transpose();
  const Matrix centered = r.samples.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / 9999.0;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_NEAR(cov(0, 0), 1.0, 0.05);
  EXPECT_NEAR(cov(1, 1), 1.0, 0.05);
  EXPECT_LT(std::abs(cov(0, 1)), 0.05);
  EXPECT_NEAR(r.weights.sum(), 1.0, 1e-12);
}

TEST(Mala, SingleSampleWithoutStepsHasUnitWeight) {
  Rng rng(2);
  const BatchObjective f = [](const Matrix& pts, Vector& v, Matrix* g) {
    v = pts.rowwise().sum();
    if (g) *g = Matrix::Ones(pts.rows(), pts.cols());
  };
  const Matrix start = (Matrix(1, 3) << 0.5, -1.0, 2.0).finished();
  const MalaResult r = mala_sample(f, start, 10.0, 0, 0.3, rng);
  EXPECT_EQ(r.samples, start);
  ASSERT_EQ(r.weights.size(), 1);
  EXPECT_EQ(r.weights(0), 1.0);
  EXPECT_DOUBLE_EQ(r.expected_value, 1.5);
}

TEST(Mala, QuadraticObjectiveMatchesConjugateGaussian) {
  // f = −½ zᵀHz at temperature T gives the target N(0, (I + H/T)⁻¹).
  Rng rng(3);
  const Vector h = (Vector(2) << 2.0, 8.0).finished();
  const BatchObjective f = [&](const Matrix& pts, Vector& v, Matrix* g) {
    v = -0.5 * (pts.array().square().rowwise() * h.transpose().array()).rowwise().sum().matrix();
    if (g) *g = -(pts.array().rowwise() * h.transpose().array()).matrix();
  };
  const MalaResult r = mala_sample(f, rng.normal_matrix(10000, 2), 2.0, 300, 0.3, rng);
  const Vector mean = r.samples.colwise().mean().transpose();
  const Matrix centered = r.samples.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / 9999.0;
  EXPECT_NEAR(cov(0, 0), 0.5, 0.05);
  EXPECT_NEAR(cov(1, 1), 0.2, 0.02);
  EXPECT_LT(std::abs(cov(0, 1)), 0.02);
  EXPECT_GT(r.acceptance_rate, 0.3);
}

// ---- gradient ascent ----

const BatchObjective kBumpy = [](const Matrix& pts, Vector& v, Matrix* g) {
  // Concave quadratic plus a ripple: several local maxima per coordinate.
  v = (-(pts.array() - 1.0).square() + 0.5 * (3.0 * pts.array()).sin()).rowwise().sum().matrix();
  if (g) *g = (-2.0 * (pts.array() - 1.0) + 1.5 * (3.0 * pts.array()).cos()).matrix();
};

TEST(GradientAscent, ZeroStepsLeavesPointsUnchanged) {
  Rng rng(4);
  const Matrix start = rng.normal_matrix(5, 3);
  const OptimizationTrace tr = gradient_ascent(kBumpy, start, 0, 0.3);
  EXPECT_EQ(tr.points, start);
  EXPECT_TRUE(tr.best_history.empty());
  Vector v;
  kBumpy(start, v, nullptr);
  EXPECT_EQ(tr.values, v);
}

TEST(GradientAscent, MonotoneAndImproving) {
  Rng rng(5);
  const Matrix start = rng.normal_matrix(20, 4, 3.0);
  Vector initial;
  kBumpy(start, initial, nullptr);
  const OptimizationTrace tr = gradient_ascent(kBumpy, start, 200, 0.3);
  for (std::size_t i = 1; i < tr.best_history.size(); ++i) {
    EXPECT_GE(tr.best_history[i], tr.best_history[i - 1]);
  }
  for (Eigen::Index k = 0; k < start.rows(); ++k) EXPECT_GE(tr.values(k), initial(k));
  Vector recomputed;
  kBumpy(tr.points, recomputed, nullptr);
  EXPECT_EQ(recomputed, tr.values);
  EXPECT_GT(tr.values.maxCoeff(), initial.maxCoeff());
}

// ---- exact score ----

TEST(ExactScore, ZeroGradientGivesZero) {
  Rng rng(6);
  const Network net = random_network(2, {3}, 2, rng);
  const Matrix x = rng.normal_matrix(15, 2);
  EXPECT_EQ(natural_expansion_score_exact(net, x, predict(net, x), TaskKind::least_squares), 0.0);
}

TEST(ExactScore, LinearLeastSquaresIsTwiceTheExcessLoss) {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    const Network net = random_network(3, {}, 2, rng);
    const Matrix x = rng.normal_matrix(30, 3);
    const Matrix t = rng.normal_matrix(30, 2);
    const Matrix xb = with_bias(x);
    const Matrix best = xb * xb.colPivHouseholderQr().solve(t);
    const double l_star = 0.5 * (best - t).squaredNorm() / 30.0;
    const double l = compute_loss(predict(net, x), t, TaskKind::least_squares).loss;
    const double eta = natural_expansion_score_exact(net, x, t, TaskKind::least_squares);
    EXPECT_NEAR(eta, 2.0 * (l - l_star), 1e-6 * 2.0 * (l - l_star));
  }
}

TEST(ExactScore, BoundedByLambdaAndNonNegative) {
  Rng rng(8);
  for (int it = 0; it < 30; ++it) {
    const Network net = random_network(2, {3, 2}, 2, rng);
    const Matrix x = rng.normal_matrix(12, 2);
    const Matrix t = rng.normal_matrix(12, 2);
    const LossResult loss = compute_loss(predict(net, x), t, TaskKind::least_squares);
    const double eta = natural_expansion_score_exact(net, x, t, TaskKind::least_squares);
    EXPECT_GE(eta, -1e-9);
    EXPECT_LE(eta, lambda_bound(loss.output_grads) + 1e-9);
  }
}

// ---- residual gradient ----

Matrix root_of_moment(const Matrix& x, double damping) {
  Matrix a = symmetrized(x.transpose() * x / static_cast<double>(x.rows()));
  a.diagonal().array() += damping;
  return inverse_root(a);
}

TEST(ResidualGradient, UncorrelatedGradientPassesThrough) {
  Rng rng(9);
  const Matrix x = with_bias(rng.normal_matrix(40, 3));
  const Matrix g = orthogonal_part(rng.normal_matrix(40, 2), x);
  const Matrix gr = residual_gradient(g, x, root_of_moment(x, 0.1));
  EXPECT_LT((gr - g).norm(), 1e-12 * g.norm());
}

TEST(ResidualGradient, FullyPredictedGradientVanishes) {
  Rng rng(10);
  const Matrix x = with_bias(rng.normal_matrix(40, 3));
  const Matrix g = x * rng.normal_matrix(4, 2);
  const Matrix gr = residual_gradient(g, x, root_of_moment(x, 0.0));
  EXPECT_LT(gr.norm(), 1e-8 * g.norm());
}

TEST(ResidualGradient, OrthogonalToExistingActivations) {
  Rng rng(11);
  for (int it = 0; it < 50; ++it) {
    const Matrix x = with_bias(rng.normal_matrix(30, 4));
    const Matrix g = rng.normal_matrix(30, 3);
    const Matrix gr = residual_gradient(g, x, root_of_moment(x, 0.0));
    const Matrix a = x.transpose() * x / 30.0;
    const Matrix proj = (gr.transpose() * x / 30.0) * a.inverse();
    const Matrix raw = (g.transpose() * x / 30.0) * a.inverse();
    EXPECT_LT(proj.norm(), 1e-8 * raw.norm());
  }
}

// ---- Δη′ ----

TEST(DeltaEta, DuplicateActivationIsRedundant) {
  Rng rng(12);
  const Matrix x = with_bias(rng.normal_matrix(50, 3));
  const Matrix gr = residual_gradient(rng.normal_matrix(50, 2), x, root_of_moment(x, 0.0));
  EXPECT_LE(delta_eta_lower_bound(x.col(1), gr, Matrix::Identity(2, 2)), 1e-8);
}

TEST(DeltaEta, UncorrelatedProposalScoresZero) {
  Rng rng(13);
  const Matrix gr = rng.normal_matrix(50, 2);
  const Matrix ap = orthogonal_part(rng.normal_matrix(50, 2), gr);
  EXPECT_LT(delta_eta_lower_bound(ap, gr, Matrix::Identity(2, 2)), 1e-20);
}

TEST(DeltaEta, MatchesDenseTraceAndIsNonNegative) {
  Rng rng(14);
  for (int it = 0; it < 100; ++it) {
    const Matrix ap = rng.normal_matrix(25, 3);
    const Matrix gr = rng.normal_matrix(25, 2);
    const Matrix m = rng.normal_matrix(2, 2);
    const Matrix s_inv = m * m.transpose() + 0.1 * Matrix::Identity(2, 2);
    const Matrix c = gr.transpose() * ap / 25.0;
    const Matrix a = ap.transpose() * ap / 25.0 + 1e-8 * Matrix::Identity(3, 3);
    const double dense = (a.inverse() * c.transpose() * s_inv * c).trace();
    const double got = delta_eta_lower_bound(ap, gr, s_inv);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, dense, 1e-10 * dense);
  }
}

TEST(DeltaEta, WidthEvaluationAgreesWithDirectBound) {
  Rng rng(15);
  ScoringContext ctx;
  ctx.features = with_bias(rng.normal_matrix(40, 2));
  ctx.residual = rng.normal_matrix(40, 2);
  ctx.s_inv = Matrix::Identity(2, 2) * 2.0;
  const Matrix w = rng.normal_matrix(6, 3);
  const Matrix theta = rng.normal_matrix(6, 3);
  const WidthEvaluation ev = evaluate_width_candidates(ctx, w, theta, false);
  for (Eigen::Index k = 0; k < 6; ++k) {
    Matrix ap(40, 1);
    for (Eigen::Index n = 0; n < 40; ++n) {
      ap(n, 0) = rational_eval({theta(k, 0), theta(k, 1), theta(k, 2)}, ctx.features.row(n).dot(w.row(k)));
    }
    EXPECT_NEAR(ev.score(k), delta_eta_lower_bound(ap, ctx.residual, ctx.s_inv), 1e-12 * (1.0 + ev.score(k)));
  }
}

TEST(DeltaEta, WidthGradientMatchesFiniteDifferences) {
  Rng rng(16);
  ScoringContext ctx;
  ctx.features = with_bias(rng.normal_matrix(30, 2));
  ctx.residual = rng.normal_matrix(30, 2);
  ctx.s_inv = Matrix::Identity(2, 2);
  const Matrix w = rng.normal_matrix(4, 3);
  const Matrix theta = rng.normal_matrix(4, 3);
  const WidthEvaluation ev = evaluate_width_candidates(ctx, w, theta, true);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 3; ++i) {
    Matrix wp = w, wm = w, tp = theta, tm = theta;
    wp.col(i).array() += h;
    wm.col(i).array() -= h;
    tp.col(i).array() += h;
    tm.col(i).array() -= h;
    const Vector dw = (evaluate_width_candidates(ctx, wp, theta, false).score -
                       evaluate_width_candidates(ctx, wm, theta, false).score) / (2 * h);
    const Vector dt = (evaluate_width_candidates(ctx, w, tp, false).score -
                       evaluate_width_candidates(ctx, w, tm, false).score) / (2 * h);
    EXPECT_LT((dw - ev.grad_w.col(i)).norm(), 1e-6 * (1.0 + dw.norm()));
    EXPECT_LT((dt - ev.grad_theta.col(i)).norm(), 1e-6 * (1.0 + dt.norm()));
  }
}

TEST(DeltaEta, DepthGradientMatchesFiniteDifferences) {
  Rng rng(17);
  ScoringContext ctx;
  ctx.features = rng.normal_matrix(30, 2);
  ctx.residual = rng.normal_matrix(30, 2);
  ctx.s_inv = Matrix::Identity(2, 2);
  const Matrix w = rng.normal_matrix(2, 2) + 2.0 * Matrix::Identity(2, 2);
  const Matrix theta = rng.normal_matrix(2, 3);
  const DepthEvaluation ev = evaluate_depth_candidate(ctx, w, theta, 0.01, true);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 2; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      Matrix wp = w, wm = w;
      wp(i, j) += h;
      wm(i, j) -= h;
      const double fd = (evaluate_depth_candidate(ctx, wp, theta, 0.01, false).objective -
                         evaluate_depth_candidate(ctx, wm, theta, 0.01, false).objective) / (2 * h);
      EXPECT_NEAR(ev.grad_w(i, j), fd, 1e-6 * (1.0 + std::abs(fd)));
    }
    for (int t = 0; t < 3; ++t) {
      Matrix tp = theta, tm = theta;
      tp(i, t) += h;
      tm(i, t) -= h;
      const double fd = (evaluate_depth_candidate(ctx, w, tp, 0.01, false).objective -
                         evaluate_depth_candidate(ctx, w, tm, 0.01, false).objective) / (2 * h);
      EXPECT_NEAR(ev.grad_theta(i, t), fd, 1e-6 * (1.0 + std::abs(fd)));
    }
  }
}

// ---- proposals ----

// 1-D features on [−3, 3] and a residual that is a bump at x = 1.5, made orthogonal to (x, 1).
ScoringContext bump_context() {
  const Eigen::Index n = 241;
  Matrix x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = -3.0 + 6.0 * static_cast<double>(i) / (n - 1);
  ScoringContext ctx;
  ctx.features = with_bias(x);
  Matrix g(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) g(i, 0) = std::exp(-(x(i, 0) - 1.5) * (x(i, 0) - 1.5) / 0.1);
  ctx.residual = orthogonal_part(g, ctx.features);
  ctx.s_inv = Matrix::Identity(1, 1);
  return ctx;
}

// Zero of the pre-activation, where the rational part of σ is centred.
double neuron_center(const Matrix& w) { return -w(0, 1) / w(0, 0); }

TEST(ProposeWidth, SingleCandidateWithoutStepsKeepsRawScore) {
  const ScoringContext ctx = bump_context();
  ExpansionConfig cfg;
  cfg.n_width_proposals = 1;
  cfg.opt_steps = 0;
  Rng rng(18);
  const Proposal p = propose_width(ctx, 0, cfg, rng);
  Rng replay(18);
  const Matrix start = replay.normal_matrix(1, 5);
  EXPECT_EQ(p.weights, start.leftCols(2));  // scale 1/√1
  EXPECT_EQ(p.activations[0], (RationalParams{start(0, 2), start(0, 3), start(0, 4)}));
  const WidthEvaluation ev = evaluate_width_candidates(ctx, start.leftCols(2), start.rightCols(3), false);
  EXPECT_EQ(p.score, ev.score(0));
  EXPECT_EQ(p.realized, p.score);
}

TEST(ProposeWidth, AscentFindsTheUnderfitRegion) {
  const ScoringContext ctx = bump_context();
  // Grid oracle over the centre c and sharpness s of a pure bump neuron 1/(1 + (s(x − c))²).
  double grid_best = 0.0, grid_center = 0.0;
  for (int ic = 0; ic <= 120; ++ic) {
    const double c = -3.0 + 0.05 * ic;
    for (double s : {0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0}) {
      const Matrix w = (Matrix(1, 2) << s, -s * c).finished();
      const Matrix theta = (Matrix(1, 3) << 0.0, 1.0, 0.0).finished();
      const double v = evaluate_width_candidates(ctx, w, theta, false).score(0);
      if (v > grid_best) {
        grid_best = v;
        grid_center = c;
      }
    }
  }
  ASSERT_NEAR(grid_center, 1.5, 0.1);

  ExpansionConfig cfg;
  cfg.n_width_proposals = 100;
  cfg.opt_steps = 300;
  Rng rng(19);
  const Proposal p = propose_width(ctx, 0, cfg, rng);
  cfg.opt_steps = 0;
  Rng raw_rng(19);
  const Proposal raw = propose_width(ctx, 0, cfg, raw_rng);
  // 300 shrinking-step iterations stop on a plateau short of the bump optimum (about 75% here).
  EXPECT_GT(p.score, 2.0 * raw.score);
  EXPECT_GE(p.score, 0.5 * grid_best);
  EXPECT_NEAR(neuron_center(p.weights), grid_center, 0.5);
}

TEST(ProposeWidth, AscentFromAPoorStartImprovesTenfold) {
  const ScoringContext ctx = bump_context();
  // A broad neuron centred on the wrong side.
  const Matrix start = (Matrix(1, 5) << 1.0, 2.0, 0.2, 1.0, 0.0).finished();
  const BatchObjective f = [&](const Matrix& pts, Vector& v, Matrix* g) {
    const WidthEvaluation ev = evaluate_width_candidates(ctx, pts.leftCols(2), pts.rightCols(3), g != nullptr);
    v = ev.score;
    if (g) {
      g->resize(pts.rows(), 5);
      *g << ev.grad_w, ev.grad_theta;
    }
  };
  Vector initial;
  f(start, initial, nullptr);
  const OptimizationTrace tr = gradient_ascent(f, start, 300, 0.3);
  EXPECT_GE(tr.values(0), 10.0 * initial(0));
}

// Net whose output gradients are a linear function of the last hidden layer's activations.
struct PredictedFixture {
  Network net;
  Matrix inputs, targets;
};

PredictedFixture predicted_fixture(std::uint64_t seed) {
  Rng rng(seed);
  PredictedFixture fx;
  fx.net = random_network(2, {4}, 2, rng);
  fx.inputs = rng.normal_matrix(60, 2);
  const ForwardTrace tr = forward(fx.net, fx.inputs);
  fx.targets = tr.outputs - tr.inputs[1] * rng.normal_matrix(5, 2);
  return fx;
}

TEST(ProposeWidth, ConvergedLayerOffersNothing) {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const PredictedFixture fx = predicted_fixture(seed);
    const BatchAnalysis ba = analyze_batch(fx.net, fx.inputs, fx.targets, TaskKind::least_squares, 1e-10,
                                           CurvatureMode::kfac_moments, nullptr);
    const ScoringContext ctx = width_context(ba, 0, 1e-8);
    ASSERT_GT(ctx.eta_c, 0.0);
    ExpansionConfig cfg;
    cfg.n_width_proposals = 20;
    cfg.opt_steps = 50;
    Rng rng(seed);
    EXPECT_LE(propose_width(ctx, 0, cfg, rng).score, 1e-6 * ctx.eta_c);
  }
}

TEST(Redundancy, DuplicatedNeuronIsAnnihilated) {
  Rng rng(26);
  for (int it = 0; it < 30; ++it) {
    const Network net = random_network(3, {5}, 2, rng);
    const Matrix x = rng.normal_matrix(80, 3);
    const Matrix t = rng.normal_matrix(80, 2);
    const BatchAnalysis ba =
        analyze_batch(net, x, t, TaskKind::least_squares, 1e-10, CurvatureMode::kfac_moments, nullptr);
    const ScoringContext ctx = width_context(ba, 0, 1e-8);
    const DenseLayer& hidden = net.layers[0];
    for (Eigen::Index j = 0; j < hidden.out_dim(); ++j) {
      const RationalParams& a = hidden.activations[static_cast<std::size_t>(j)];
      const Matrix theta = (Matrix(1, 3) << a.alpha, a.beta, a.gamma).finished();
      const double s = evaluate_width_candidates(ctx, hidden.weights.row(j), theta, false).score(0);
      EXPECT_LE(s, 1e-6 * ctx.eta_c) << "net " << it << " neuron " << j;
    }
  }
}

TEST(MonotoneAugmentation, WidthNeverLowersExactScore) {
  Rng rng(27);
  for (int it = 0; it < 100; ++it) {
    const Network net = random_network(2, {3}, 2, rng);
    const Matrix x = rng.normal_matrix(20, 2);
    const Matrix t = rng.normal_matrix(20, 2);
    const Network grown = add_width(net, 0, rng.normal_matrix(2, 3), {{1.0, 0.5, -0.5}, {0.3, 1.0, 1.0}});
    const double before = natural_expansion_score_exact(net, x, t, TaskKind::least_squares);
    const double after = natural_expansion_score_exact(grown, x, t, TaskKind::least_squares);
    EXPECT_GE(after, before - 1e-9) << "instance " << it;
  }
}

TEST(Lemma1, ScoresAreNonNegative) {
  Rng rng(28);
  for (int it = 0; it < 30; ++it) {
    const Network net = random_network(2, {3, 3}, 3, rng);
    const Matrix x = rng.normal_matrix(25, 2);
    Matrix t = Matrix::Zero(25, 3);
    for (Eigen::Index i = 0; i < 25; ++i) t(i, static_cast<Eigen::Index>(rng.next() % 3)) = 1.0;
    for (TaskKind task : {TaskKind::least_squares, TaskKind::softmax_cross_entropy}) {
      EXPECT_GE(natural_expansion_score_exact(net, x, t, task), -1e-9);
      const BatchAnalysis ba = analyze_batch(net, x, t, task, 0.1, CurvatureMode::kfac_moments, nullptr);
      for (double e : ba.layer_eta) EXPECT_GE(e, -1e-9);
      EXPECT_GE(ba.activation_eta, -1e-9);
      for (int l = 0; l < 2; ++l) {
        const WidthEvaluation ev =
            evaluate_width_candidates(width_context(ba, l, 1e-8), rng.normal_matrix(10, 4), rng.normal_matrix(10, 3), false);
        EXPECT_GE(ev.score.minCoeff(), -1e-9);
      }
    }
  }
}

TEST(ProposeDepth, IdentityInsertionAddsNothing) {
  Rng rng(29);
  for (int it = 0; it < 10; ++it) {
    const Network net = random_network(3, {4}, 2, rng);
    const Matrix x = rng.normal_matrix(60, 3);
    const Matrix t = rng.normal_matrix(60, 2);
    const BatchAnalysis ba =
        analyze_batch(net, x, t, TaskKind::least_squares, 1e-10, CurvatureMode::kfac_moments, nullptr);
    for (int pos = 0; pos < 2; ++pos) {
      const ScoringContext ctx = depth_context(ba, pos, 1e-8);
      const Eigen::Index d = ctx.features.cols();
      Matrix theta(d, 3);
      theta.rowwise() = (Eigen::RowVector3d() << 1.0, 0.0, 0.0).finished();
      const DepthEvaluation ev = evaluate_depth_candidate(ctx, Matrix::Identity(d, d), theta, 0.01, false);
      EXPECT_LE(ev.score, 1e-6 * ctx.eta_c) << "position " << pos;
      EXPECT_EQ(ev.objective, ev.score);  // ln det I = 0
    }
  }
}

TEST(ProposeDepth, CandidatesMeetTheClampFloor) {
  Rng rng(30);
  const Network net = random_network(3, {}, 2, rng);
  const Matrix x = rng.normal_matrix(50, 3);
  const BatchAnalysis ba = analyze_batch(net, x, rng.normal_matrix(50, 2), TaskKind::least_squares, 0.1,
                                         CurvatureMode::kfac_moments, nullptr);
  ExpansionConfig cfg;
  cfg.n_depth_proposals = 5;
  cfg.opt_steps = 20;
  for (ProposalOptimizer opt : {ProposalOptimizer::grad_ascent, ProposalOptimizer::mala}) {
    cfg.optimizer = opt;
    const Proposal p = propose_depth(depth_context(ba, 0, 1e-8), 0, cfg, rng);
    ASSERT_EQ(p.weights.rows(), 3);
    ASSERT_EQ(p.weights.cols(), 3);
    const Vector sv = p.weights.jacobiSvd().singularValues();
    EXPECT_GE(sv.minCoeff(), 0.001 * sv.mean() * (1.0 - 1e-12));
    EXPECT_GE(p.score, 0.0);
    EXPECT_NO_THROW(insert_layer(net, 0, p.weights));
  }
}

TEST(ProposeDepth, ScoreIsDividedByLayerFactor) {
  Rng rng(31);
  const Network net = random_network(2, {}, 1, rng);
  const Matrix x = rng.normal_matrix(40, 2);
  const BatchAnalysis ba = analyze_batch(net, x, rng.normal_matrix(40, 1), TaskKind::least_squares, 0.1,
                                         CurvatureMode::kfac_moments, nullptr);
  const ScoringContext ctx = depth_context(ba, 0, 1e-8);
  ExpansionConfig cfg;
  cfg.n_depth_proposals = 4;
  cfg.opt_steps = 10;
  cfg.layer_score_factor = 1.0;
  Rng r1(32), r2(32);
  const Proposal a = propose_depth(ctx, 0, cfg, r1);
  cfg.layer_score_factor = 60.0;
  const Proposal b = propose_depth(ctx, 0, cfg, r2);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_NEAR(b.score * 60.0, a.score, 1e-12 * a.score);
}

// ---- expansion events ----

TEST(Theorem1, WorkedInstance) {
  const double bound = theorem1_bound(1.0, 1e-3, 1.0);
  EXPECT_LT(bound, 11.0);
  EXPECT_NEAR(bound, 1.0 + 3.0 * std::log(10.0) / std::log(2.0), 1e-12);
  EXPECT_TRUE(std::isinf(theorem1_bound(1.0, 0.0, 1.0)));
  // λ at or below α/(1+τ) admits no addition at all.
  EXPECT_EQ(theorem1_bound(0.4, 1.0, 1.0), 0.0);
  EXPECT_EQ(theorem1_bound(0.0, 1.0, 1.0), 0.0);
  EXPECT_NEAR(theorem1_bound(1.0, 1.0, 1.0), 1.0, 1e-15);
}

struct RegressionFixture {
  Network net;
  Matrix inputs, targets;
};

RegressionFixture regression_fixture(std::uint64_t seed) {
  const Dataset data = gen_regression_1d(128, 0.05, seed);
  Rng rng(seed);
  return {random_network(1, {2}, 1, rng), data.inputs, data.targets};
}

TEST(ExpansionEvent, HugeThresholdLeavesNetworkUnchanged) {
  const RegressionFixture fx = regression_fixture(33);
  ExpansionConfig cfg;
  cfg.tau = 1e12;
  cfg.n_width_proposals = 10;
  cfg.n_depth_proposals = 4;
  cfg.opt_steps = 20;
  const ExpansionResult r = expansion_event(fx.net, fx.inputs, fx.targets, TaskKind::least_squares, cfg, 1);
  EXPECT_TRUE(r.report.accepted.empty());
  EXPECT_EQ(flatten_parameters(r.net), flatten_parameters(fx.net));
  EXPECT_EQ(hidden_sizes(r.net), hidden_sizes(fx.net));
  EXPECT_EQ(r.report.candidates.size(), 3u);  // one width location, two depth positions
}

TEST(ExpansionEvent, AbsoluteThresholdRejectsLargeRelativeGain) {
  const RegressionFixture fx = regression_fixture(34);
  ExpansionConfig cfg;
  cfg.tau = 0.0;
  cfg.alpha_stop = 0.0;
  cfg.max_additions_per_event = 1;
  cfg.n_width_proposals = 10;
  cfg.n_depth_proposals = 4;
  cfg.opt_steps = 20;
  const ExpansionResult open = expansion_event(fx.net, fx.inputs, fx.targets, TaskKind::least_squares, cfg, 1);
  ASSERT_EQ(open.report.accepted.size(), 1u);
  double top = 0.0;
  for (const LocationScore& c : open.report.candidates) top = std::max(top, c.score);
  ASSERT_GT(top, 0.0);
  cfg.alpha_stop = 2.0 * top;
  const ExpansionResult closed = expansion_event(fx.net, fx.inputs, fx.targets, TaskKind::least_squares, cfg, 1);
  EXPECT_TRUE(closed.report.accepted.empty());
  for (const LocationScore& c : closed.report.candidates) EXPECT_FALSE(c.eligible);
}

TEST(ExpansionEvent, DeterministicPreservingAndBounded) {
  const RegressionFixture fx = regression_fixture(35);
  ExpansionConfig cfg;
  cfg.tau = 0.05;
  cfg.alpha_stop = 1e-4;
  cfg.n_width_proposals = 20;
  cfg.n_depth_proposals = 4;
  cfg.opt_steps = 50;
  const ExpansionResult a = expansion_event(fx.net, fx.inputs, fx.targets, TaskKind::least_squares, cfg, 7);
  const ExpansionResult b = expansion_event(fx.net, fx.inputs, fx.targets, TaskKind::least_squares, cfg, 7);
  ASSERT_FALSE(a.report.accepted.empty());
  EXPECT_EQ(flatten_parameters(a.net), flatten_parameters(b.net));
  EXPECT_EQ(hidden_sizes(a.net), hidden_sizes(b.net));
  EXPECT_LE(static_cast<double>(a.report.accepted.size()), a.report.theorem1_bound);
  int depth = 0;
  for (const AcceptedAddition& acc : a.report.accepted) {
    EXPECT_GT(acc.score, cfg.tau * acc.eta_c);
    EXPECT_GT(acc.score, cfg.alpha_stop);
    if (acc.kind == ProposalKind::width) {
      EXPECT_EQ(acc.output_deviation, 0.0);
    } else {
      ++depth;
      EXPECT_LE(acc.output_deviation, 1e-8);
    }
  }
  EXPECT_LE(depth, 1);
  EXPECT_LE(relative_deviation(predict(fx.net, fx.inputs), predict(a.net, fx.inputs)), 1e-8);
  const nlohmann::json j = to_json(a.report);
  EXPECT_EQ(j["type"], "expansion");
  EXPECT_EQ(j["accepted"].size(), a.report.accepted.size());
}

TEST(ExpansionEvent, HalfMoonsLinearModelGrowsALayer) {
  const Dataset data = gen_half_moons(400, 0.1, 36);
  Rng rng(36);
  const Network linear = make_network(2, {}, 2, rng);
  TrainConfig tc;
  tc.total_steps = 200;
  tc.expansion_enabled = false;
  const TrainResult fitted = train(linear, data, tc, ExpansionConfig{});
  const Matrix x = rows_of(data.inputs, data.train);
  const Matrix t = rows_of(data.targets, data.train);
  ExpansionConfig cfg;
  cfg.n_depth_proposals = 20;
  cfg.opt_steps = 100;
  const ExpansionResult r = expansion_event(fitted.net, x, t, TaskKind::softmax_cross_entropy, cfg, 3);
  ASSERT_EQ(r.report.candidates.size(), 1u);
  EXPECT_EQ(r.report.candidates[0].kind, ProposalKind::depth);
  EXPECT_GT(r.report.candidates[0].score, cfg.tau * r.report.candidates[0].eta_c);
  ASSERT_FALSE(r.report.accepted.empty());
  EXPECT_EQ(r.report.accepted[0].kind, ProposalKind::depth);
  EXPECT_EQ(r.net.n_layers(), 2);
}

}  // namespace
}  // namespace senn
