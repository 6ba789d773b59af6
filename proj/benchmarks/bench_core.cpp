#include <benchmark/benchmark.h>

#include "scabi/diagnostics.hpp"
#include "scabi/objectives.hpp"

namespace {

using namespace scabi;

Matrix normal_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

flows::FlowSpec spline_spec(int dim, int cond_dim) {
  flows::FlowSpec spec;
  spec.dim = dim;
  spec.cond_dim = cond_dim;
  spec.coupling = flows::CouplingKind::kSpline;
  spec.layers = 4;
  spec.hidden = {64, 64};
  spec.base = DistributionSpec::standard_normal(dim);
  return spec;
}

void BM_FlowLogProb(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng(1);
  const flows::ConditionalFlow flow(spline_spec(2, 2), rng);
  const Matrix x = normal_matrix(n, 2, rng);
  const Matrix c = normal_matrix(n, 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(flow.log_prob(x, c));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FlowLogProb)->Arg(32)->Arg(256);

void BM_FlowLogProbGradient(benchmark::State& state) {
  Rng rng(2);
  flows::ConditionalFlow flow(spline_spec(2, 2), rng);
  ad::ParameterList params;
  flow.collect_parameters(params);
  const Matrix x = normal_matrix(32, 2, rng);
  const Matrix c = normal_matrix(32, 2, rng);
  for (auto _ : state) {
    ad::zero_grads(params);
    ad::Tape tape;
    tape.backward(ad::mean(flow.log_prob(tape.constant(x), tape.constant(c))));
  }
}
BENCHMARK(BM_FlowLogProbGradient);

void BM_SelfConsistencyLoss(benchmark::State& state) {
  const simulators::GaussianMixture task(10);
  Rng rng(3);
  summaries::SummarySpec ss;
  ss.input_dim = 2;
  ss.rows_per_set = 10;
  ss.encoder_hidden = {64, 64};
  ss.embedding_dim = 32;
  ss.decoder_hidden = {64};
  ss.output_dim = 8;
  const models::NeuralPosterior post(flows::ConditionalFlow(spline_spec(2, 8), rng), summaries::SummaryNet(ss, rng));
  const models::ExplicitLikelihood lik(task);
  Matrix data(32, task.data_shape().flat());
  const Matrix theta = task.sample_prior(32, rng);
  for (Index i = 0; i < 32; ++i) data.row(i) = simulators::flatten(task.simulate(theta.row(i).transpose(), rng));
  objectives::SelfConsistencyConfig cfg;
  cfg.K = static_cast<int>(state.range(0));
  for (auto _ : state) {
    ad::Tape tape(false);
    benchmark::DoNotOptimize(objectives::self_consistency_loss(tape, data, task.prior(), lik, post, cfg, rng).value());
  }
}
BENCHMARK(BM_SelfConsistencyLoss)->Arg(10)->Arg(100);

void BM_Mmd(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng(4);
  const Matrix x = normal_matrix(n, 2, rng);
  const Matrix y = normal_matrix(n, 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(diagnostics::mmd(x, y));
}
BENCHMARK(BM_Mmd)->Arg(500)->Arg(1000);

void BM_GmmLoglik(benchmark::State& state) {
  const simulators::GaussianMixture task(10);
  Rng rng(5);
  const Vector theta = task.sample_prior(1, rng).row(0).transpose();
  const Matrix y = task.simulate(theta, rng);
  for (auto _ : state) benchmark::DoNotOptimize(task.loglik(y, theta));
}
BENCHMARK(BM_GmmLoglik);

}  // namespace

BENCHMARK_MAIN();
