#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fd_check.hpp"
#include "scabi/objectives.hpp"

namespace scabi {
namespace {

using objectives::Batch;
using objectives::ScheduleSpec;
using objectives::SelfConsistencyConfig;

Matrix data_rows(std::initializer_list<double> ys) {
  Matrix m(static_cast<Index>(ys.size()), 1);
  Index i = 0;
  for (double y : ys) m(i++, 0) = y;
  return m;
}

TEST(LogMarginal, ExactPosteriorRecoversEvidence) {
  simulators::ConjugateGaussian task(1, 1.0, 1.0);
  models::ConjugatePosterior post(task);
  models::ExplicitLikelihood lik(task);
  ad::Tape tape(false);
  const Matrix data = data_rows({0.0, 0.0, 0.0});
  const Matrix theta = data_rows({-1.3, 0.0, 2.2});
  const auto est = objectives::log_marginal_estimate(tape, theta, data, post.encode(tape, data), task.prior(), lik,
                                                     post, -1e6, nullptr);
  // log N(0; 0, 2)
  for (Index r = 0; r < 3; ++r) EXPECT_NEAR(est.values.value()(r, 0), -1.26551212348, 1e-10);
}

TEST(SelfConsistency, ExactPosteriorHasZeroLoss) {
  simulators::ConjugateGaussian task(5, 1.5, 0.7);
  models::ConjugatePosterior post(task);
  models::ExplicitLikelihood lik(task);
  Rng rng(3);
  Matrix data(20, 5);
  for (Index i = 0; i < data.rows(); ++i) {
    Vector th(1);
    th(0) = rng.normal(0.0, 1.5);
    data.row(i) = simulators::flatten(task.simulate(th, rng));
  }
  SelfConsistencyConfig cfg;
  cfg.K = 50;
  ad::Tape tape(false);
  const double loss = objectives::self_consistency_loss(tape, data, task.prior(), lik, post, cfg, rng).value()(0, 0);
  EXPECT_LT(loss, 1e-8);
}

// With q = N(m, f v) the log-ratio is 0.5 log f + (1 - f) u^2 / 2, u ~ N(0, 1),
// so its variance is (1 - f)^2 / 2. The sample variance of u^2 over K draws has
// relative sd sqrt(56 / K) / 2, about 2.6% at K = 20000; tolerances are ~4 sd.
TEST(SelfConsistency, MiscalibratedPosteriorMatchesClosedForm) {
  simulators::ConjugateGaussian task(1, 1.0, 1.0);
  models::ExplicitLikelihood lik(task);
  SelfConsistencyConfig cfg;
  cfg.K = 20000;
  const Matrix data = data_rows({0.4});
  double previous_gap = -1.0;
  for (double f : {1.0, 1.25, 1.6, 2.0}) {
    models::ConjugatePosterior post(task, f);
    Rng rng(11);
    ad::Tape tape(false);
    const double loss = objectives::self_consistency_loss(tape, data, task.prior(), lik, post, cfg, rng).value()(0, 0);
    const double expected = 0.5 * (1.0 - f) * (1.0 - f);
    EXPECT_NEAR(loss, expected, 0.11 * expected + 1e-12) << "f=" << f;
    EXPECT_GT(loss, previous_gap);
    previous_gap = loss;
  }
  for (double f : {0.5, 0.8}) {
    models::ConjugatePosterior post(task, f);
    Rng rng(12);
    ad::Tape tape(false);
    const double loss = objectives::self_consistency_loss(tape, data, task.prior(), lik, post, cfg, rng).value()(0, 0);
    EXPECT_NEAR(loss, 0.5 * (1.0 - f) * (1.0 - f), 0.11 * 0.5 * (1.0 - f) * (1.0 - f));
  }
}

// The estimate does not involve the proposal density: with the exact posterior
// it is constant wherever the draws land. With q = N(m, f v) and draws from
// N(m, s^2 f v) the log-ratio is s^2 (1 - f) u^2 / 2, variance s^4 (1 - f)^2 / 2.
TEST(SelfConsistency, BroadenedProposal) {
  simulators::ConjugateGaussian task(1, 1.0, 1.0);
  models::ExplicitLikelihood lik(task);
  SelfConsistencyConfig cfg;
  cfg.K = 20000;
  cfg.proposal_scale = 1.5;
  const Matrix data = data_rows({-0.3});
  {
    models::ConjugatePosterior exact(task);
    Rng rng(5);
    ad::Tape tape(false);
    EXPECT_LT(objectives::self_consistency_loss(tape, data, task.prior(), lik, exact, cfg, rng).value()(0, 0), 1e-8);
  }
  models::ConjugatePosterior wide(task, 2.0);
  Rng rng(5);
  ad::Tape tape(false);
  const double loss = objectives::self_consistency_loss(tape, data, task.prior(), lik, wide, cfg, rng).value()(0, 0);
  const double expected = std::pow(1.5, 4) * 0.5;
  EXPECT_NEAR(loss, expected, 0.11 * expected);
}

TEST(SelfConsistency, ExcludesDrawsOutsidePriorSupport) {
  simulators::TwoMoons task;
  models::ExplicitLikelihood lik(task);
  // A conjugate-style posterior on a uniform-prior task is enough to put
  // draws outside the box.
  flows::FlowSpec spec;
  spec.dim = 2;
  spec.cond_dim = 2;
  spec.layers = 2;
  spec.hidden = {8};
  spec.base = DistributionSpec::standard_normal(2);
  Rng init(1);
  models::NeuralPosterior post(flows::ConditionalFlow(spec, init), std::nullopt);
  SelfConsistencyConfig cfg;
  cfg.K = 200;
  cfg.proposal_scale = 3.0;
  Matrix data(2, 2);
  data << 0.1, 0.0, -0.2, 0.3;
  Rng rng(2);
  objectives::ScStats stats;
  ad::Tape tape(false);
  const double loss =
      objectives::self_consistency_loss(tape, data, task.prior(), lik, post, cfg, rng, &stats).value()(0, 0);
  EXPECT_GT(stats.excluded, 0);
  EXPECT_TRUE(std::isfinite(loss));
}

TEST(SelfConsistency, ClampCountsFloorHits) {
  simulators::ConjugateGaussian task(1, 1.0, 1.0);
  models::ConjugatePosterior post(task);
  models::ExplicitLikelihood lik(task);
  ad::Tape tape(false);
  const Matrix data = data_rows({0.0, 0.0});
  const Matrix theta = data_rows({0.0, 1e4});
  objectives::ScStats stats;
  const auto est = objectives::log_marginal_estimate(tape, theta, data, post.encode(tape, data), task.prior(), lik,
                                                     post, -1e6, &stats);
  // At 1e4 the prior (-5e7), likelihood (-5e7) and posterior all fall below the floor.
  EXPECT_EQ(stats.clamped, 3);
  EXPECT_NEAR(est.values.value()(1, 0), -1e6, 1e-6);
}

struct CaseTwo {
  simulators::GaussianMixture task{3};
  std::unique_ptr<models::NeuralPosterior> post;
  std::unique_ptr<models::NeuralLikelihood> lik;
  ad::ParameterList params;

  explicit CaseTwo(std::uint64_t seed) {
    Rng rng(seed);
    summaries::SummarySpec ss;
    ss.input_dim = 2;
    ss.rows_per_set = 3;
    ss.encoder_hidden = {8};
    ss.embedding_dim = 6;
    ss.decoder_hidden = {8};
    ss.output_dim = 3;
    flows::FlowSpec ps;
    ps.dim = 2;
    ps.cond_dim = 3;
    ps.layers = 2;
    ps.hidden = {8};
    ps.coupling = flows::CouplingKind::kSpline;
    ps.base = DistributionSpec::student_t(2, 10.0);
    flows::FlowSpec ls = ps;
    ls.dim = 6;
    ls.cond_dim = 2;
    ls.coupling = flows::CouplingKind::kAffine;
    ls.base = DistributionSpec::standard_normal(6);
    post = std::make_unique<models::NeuralPosterior>(flows::ConditionalFlow(ps, rng), summaries::SummaryNet(ss, rng));
    lik = std::make_unique<models::NeuralLikelihood>(flows::ConditionalFlow(ls, rng));
    post->collect_parameters(params);
    lik->collect_parameters(params);
    testing::randomize(params, rng, 0.15);
  }
};

Batch gmm_batch(const simulators::Task& task, Index n, Rng& rng) {
  Batch b;
  b.theta = task.sample_prior(static_cast<int>(n), rng);
  b.data.resize(n, task.data_shape().flat());
  for (Index i = 0; i < n; ++i) b.data.row(i) = simulators::flatten(task.simulate(b.theta.row(i).transpose(), rng));
  return b;
}

// Full NPLE + SC objective with fixed proposal draws, so finite differences
// see the same draws that the analytic gradient treats as constants.
TEST(SelfConsistency, GradientMatchesFiniteDifferencesLearnedLikelihood) {
  CaseTwo m(21);
  Rng rng(4);
  const Batch batch = gmm_batch(m.task, 4, rng);
  const Index k = 5;
  const Matrix draws = m.task.sample_prior(static_cast<int>(batch.data.rows() * k), rng);
  Matrix rep(batch.data.rows() * k, batch.data.cols());
  for (Index i = 0; i < batch.data.rows(); ++i) rep.middleRows(i * k, k) = batch.data.row(i).replicate(k, 1);
  auto build = [&](ad::Tape& tape) {
    const ad::Var cond = m.post->encode(tape, batch.data);
    ad::Var base = objectives::npe_loss(*m.post, batch, cond) + objectives::likelihood_loss(tape, *m.lik, batch);
    const auto est = objectives::log_marginal_estimate(tape, draws, rep, ad::repeat_rows(cond, k), m.task.prior(),
                                                       *m.lik, *m.post, -1e6, nullptr);
    return base + ad::mean(ad::segment_variance(est.values, k, est.include)) * 0.7;
  };
  const Vector analytic = testing::analytic_gradient(m.params, build);
  const Vector numeric = testing::numeric_gradient(m.params, [&] { return testing::scalar_value(build); });
  EXPECT_LT(testing::max_relative_error(analytic, numeric), 1e-4);
}

TEST(SelfConsistency, GradientMatchesFiniteDifferencesExplicitLikelihood) {
  CaseTwo m(22);
  models::ExplicitLikelihood lik(m.task);
  ad::ParameterList params;
  m.post->collect_parameters(params);
  Rng rng(6);
  const Batch batch = gmm_batch(m.task, 3, rng);
  const Index k = 4;
  const Matrix draws = m.task.sample_prior(static_cast<int>(batch.data.rows() * k), rng);
  Matrix rep(batch.data.rows() * k, batch.data.cols());
  for (Index i = 0; i < batch.data.rows(); ++i) rep.middleRows(i * k, k) = batch.data.row(i).replicate(k, 1);
  auto build = [&](ad::Tape& tape) {
    const ad::Var cond = m.post->encode(tape, batch.data);
    const auto est = objectives::log_marginal_estimate(tape, draws, rep, ad::repeat_rows(cond, k), m.task.prior(),
                                                       lik, *m.post, -1e6, nullptr);
    return objectives::npe_loss(*m.post, batch, cond) + ad::mean(ad::segment_variance(est.values, k, est.include));
  };
  const Vector analytic = testing::analytic_gradient(params, build);
  const Vector numeric = testing::numeric_gradient(params, [&] { return testing::scalar_value(build); });
  EXPECT_LT(testing::max_relative_error(analytic, numeric), 1e-4);
}

TEST(CombinedLoss, LinearInLambdaAndSkipsWhenZero) {
  CaseTwo m(23);
  models::ExplicitLikelihood explicit_lik(m.task);
  Rng data_rng(8);
  const Batch batch = gmm_batch(m.task, 6, data_rng);
  SelfConsistencyConfig cfg;
  cfg.K = 4;
  cfg.source = objectives::LikelihoodSource::kLearned;
  struct Parts {
    double total, base, sc;
  };
  auto eval = [&](double lambda, Rng& rng) {
    ad::Tape tape(false);
    const auto p = objectives::combined_loss(tape, *m.post, m.lik.get(), &explicit_lik, m.task.prior(), batch,
                                             lambda, cfg, rng);
    return Parts{p.total.value()(0, 0), p.base, p.sc};
  };
  Rng r0(1), r1(1), r2(1);
  const auto p0 = eval(0.0, r0);
  const auto p1 = eval(1.0, r1);
  const auto p2 = eval(2.5, r2);
  EXPECT_EQ(p0.base, p1.base);
  EXPECT_EQ(p0.total, p0.base);
  EXPECT_DOUBLE_EQ(p1.sc, p2.sc);
  EXPECT_NEAR(p2.total - p2.base, 2.5 * p2.sc, 1e-12 * std::max(1.0, p2.sc));
  EXPECT_NEAR(p1.total - p1.base, p1.sc, 1e-12 * std::max(1.0, p1.sc));
  // lambda == 0 leaves the stream untouched.
  Rng fresh(1);
  EXPECT_EQ(r0.next(), fresh.next());

  // NPLE base = NPE + likelihood NLL.
  ad::Tape tape(false);
  const double npe = objectives::npe_loss(tape, *m.post, batch).value()(0, 0);
  const double nll = objectives::likelihood_loss(tape, *m.lik, batch).value()(0, 0);
  EXPECT_NEAR(p0.base, npe + nll, 1e-12 * std::abs(npe + nll));
}

TEST(CombinedLoss, RequiresLikelihoodForSelfConsistency) {
  CaseTwo m(24);
  Rng rng(1);
  const Batch batch = gmm_batch(m.task, 2, rng);
  SelfConsistencyConfig cfg;
  ad::Tape tape(false);
  EXPECT_THROW(objectives::combined_loss(tape, *m.post, nullptr, nullptr, m.task.prior(), batch, 1.0, cfg, rng),
               ContractError);
  EXPECT_THROW(objectives::combined_loss(tape, *m.post, nullptr, nullptr, m.task.prior(), batch, -1.0, cfg, rng),
               ContractError);
}

TEST(CombinedLoss, NonFiniteDensityNamesTheItem) {
  CaseTwo m(25);
  Rng rng(1);
  Batch batch = gmm_batch(m.task, 3, rng);
  batch.theta(1, 0) = std::numeric_limits<double>::quiet_NaN();
  ad::Tape tape(false);
  try {
    objectives::npe_loss(tape, *m.post, batch);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.item(), 1);
  }
}

TEST(SelfConsistencyConfig, JsonAndValidation) {
  SelfConsistencyConfig c;
  c.K = 100;
  c.source = objectives::LikelihoodSource::kLearned;
  const SelfConsistencyConfig back = nlohmann::json(c).get<SelfConsistencyConfig>();
  EXPECT_EQ(back.K, 100);
  EXPECT_EQ(back.source, objectives::LikelihoodSource::kLearned);
  EXPECT_THROW(nlohmann::json({{"K", 1}}).get<SelfConsistencyConfig>(), ContractError);
  EXPECT_THROW(nlohmann::json({{"likelihood", "other"}}).get<SelfConsistencyConfig>(), ConfigError);
}

ScheduleSpec parse(const char* text) { return nlohmann::json::parse(text).get<ScheduleSpec>(); }

TEST(Schedule, GmmWarmup) {
  const ScheduleSpec s = parse(R"({"steps": [{"epoch": 5, "value": 1.0}]})");
  for (int e = 0; e < 35; ++e) EXPECT_EQ(objectives::schedule_weight(s, e, 35), e < 5 ? 0.0 : 1.0) << e;
}

TEST(Schedule, FractionOfEpochs) {
  const ScheduleSpec s = parse(R"({"steps": [{"fraction": 0.2, "value": 0.01}]})");
  for (int e = 0; e < 35; ++e) EXPECT_EQ(objectives::schedule_weight(s, e, 35), e < 7 ? 0.0 : 0.01) << e;
  for (int e = 0; e < 12; ++e) EXPECT_EQ(objectives::schedule_weight(s, e, 12), e < 2 ? 0.0 : 0.01) << e;
}

TEST(Schedule, MultipleStepsAndRamp) {
  const ScheduleSpec s = parse(R"({"steps": [{"epoch": 2, "value": 0.1}, {"epoch": 4, "value": 0.5}]})");
  EXPECT_EQ(objectives::schedule_weight(s, 1, 10), 0.0);
  EXPECT_EQ(objectives::schedule_weight(s, 2, 10), 0.1);
  EXPECT_EQ(objectives::schedule_weight(s, 9, 10), 0.5);
  const ScheduleSpec r = parse(R"({"kind": "linear-ramp", "start": 2, "end": 6, "value": 2.0})");
  EXPECT_EQ(objectives::schedule_weight(r, 0, 10), 0.0);
  EXPECT_EQ(objectives::schedule_weight(r, 4, 10), 1.0);
  EXPECT_EQ(objectives::schedule_weight(r, 8, 10), 2.0);
  const ScheduleSpec back = nlohmann::json(r).get<ScheduleSpec>();
  EXPECT_EQ(objectives::schedule_weight(back, 3, 10), 0.5);
  EXPECT_EQ(objectives::schedule_weight(ScheduleSpec::constant_zero(), 50, 100), 0.0);
}

TEST(Schedule, Validation) {
  EXPECT_THROW(parse(R"({"steps": [{"epoch": 0, "value": 1.0}]})"), ContractError);
  EXPECT_THROW(parse(R"({"steps": [{"epoch": 3, "value": -1.0}]})"), ContractError);
  EXPECT_THROW(parse(R"({"kind": "cosine"})"), ConfigError);
  EXPECT_THROW(parse(R"({"kind": "linear-ramp", "start": 3, "end": 3})"), ContractError);
}

}  // namespace
}  // namespace scabi
