// Hot paths of training and growth at MNIST-like and toy sizes.
#include <benchmark/benchmark.h>

#include "senn/curvature.hpp"
#include "senn/expansion.hpp"
#include "senn/linalg.hpp"
#include "senn/network.hpp"
#include "senn/rng.hpp"
#include "senn/trainer.hpp"

using namespace senn;

namespace {

struct Problem {
  Network net;
  Matrix x;
  Matrix t;
};

// Softmax classification batch with one-hot targets.
Problem make_problem(Eigen::Index batch, Eigen::Index in, int hidden, Eigen::Index out) {
  Rng rng(42);
  Problem p;
  p.net = make_network(in, {hidden}, out, rng);
  p.x.resize(batch, in);
  for (Eigen::Index j = 0; j < in; ++j)
    for (Eigen::Index i = 0; i < batch; ++i) p.x(i, j) = rng.uniform01();
  p.t = Matrix::Zero(batch, out);
  for (Eigen::Index i = 0; i < batch; ++i) p.t(i, static_cast<Eigen::Index>(rng.next() % out)) = 1.0;
  return p;
}

void BM_NaturalGradientStep(benchmark::State& state) {
  const Problem p = make_problem(state.range(0), state.range(1), static_cast<int>(state.range(2)), 10);
  TrainConfig cfg;
  cfg.cg_max_iters = 20;
  for (auto _ : state) {
    StepResult r = natural_gradient_step(p.net, p.x, p.t, TaskKind::softmax_cross_entropy, cfg);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NaturalGradientStep)->Args({256, 2, 8})->Args({1024, 784, 30})->Unit(benchmark::kMillisecond);

void BM_AnalyzeBatch(benchmark::State& state) {
  const Problem p = make_problem(state.range(0), state.range(1), static_cast<int>(state.range(2)), 10);
  for (auto _ : state) {
    BatchAnalysis ba = analyze_batch(p.net, p.x, p.t, TaskKind::softmax_cross_entropy, 0.1,
                                     CurvatureMode::kfac_moments, nullptr);
    benchmark::DoNotOptimize(ba.lambda);
  }
}
BENCHMARK(BM_AnalyzeBatch)->Args({256, 2, 8})->Args({1024, 784, 30})->Unit(benchmark::kMillisecond);

// One gradient evaluation of K width candidates against the first layer.
void BM_WidthScoring(benchmark::State& state) {
  const Problem p = make_problem(1024, state.range(0), 30, 10);
  const BatchAnalysis ba = analyze_batch(p.net, p.x, p.t, TaskKind::softmax_cross_entropy, 0.1,
                                         CurvatureMode::kfac_moments, nullptr);
  const ScoringContext ctx = width_context(ba, 0, 0.1);
  Rng rng(7);
  const Eigen::Index k = state.range(1);
  const Matrix w = rng.normal_matrix(k, ctx.features.cols());
  const Matrix theta = rng.normal_matrix(k, 3);
  for (auto _ : state) {
    WidthEvaluation ev = evaluate_width_candidates(ctx, w, theta, true);
    benchmark::DoNotOptimize(ev.score.data());
  }
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_WidthScoring)->Args({2, 30})->Args({784, 30})->Unit(benchmark::kMillisecond);

void BM_RankOneRootUpdate(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  Rng rng(3);
  Matrix root = Matrix::Identity(d, d);
  const Vector a = rng.normal_vector(d, 0.1);
  for (auto _ : state) {
    rank_one_inverse_root_update_inplace(root, a);
    benchmark::DoNotOptimize(root.data());
  }
}
BENCHMARK(BM_RankOneRootUpdate)->Arg(31)->Arg(785);

void BM_CholeskyRefresh(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  Rng rng(4);
  const Matrix g = rng.normal_matrix(2 * d, d);
  Matrix a = g.transpose() * g / static_cast<double>(2 * d);
  a.diagonal().array() += 0.1;
  for (auto _ : state) {
    Matrix r = inverse_root(a);
    benchmark::DoNotOptimize(r.data());
  }
}
BENCHMARK(BM_CholeskyRefresh)->Arg(31)->Arg(785)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
