#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fd_check.hpp"
#include "scabi/autodiff.hpp"
#include "scabi/nn.hpp"

namespace scabi {
namespace {

using testing::analytic_gradient;
using testing::max_relative_error;
using testing::numeric_gradient;
using testing::scalar_value;

Matrix random_matrix(Index r, Index c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

// Reduces an arbitrary node to a scalar with fixed random weights so every
// output entry contributes a distinct coefficient.
ad::Var contract(ad::Var v, std::uint64_t seed) {
  Rng rng(seed);
  const ad::Var w = v.tape()->constant(random_matrix(v.rows(), v.cols(), rng));
  return ad::sum(ad::mul(v, w));
}

void expect_gradients_match(const ad::ParameterList& params, const std::function<ad::Var(ad::Tape&)>& build) {
  const Vector a = analytic_gradient(params, build);
  const Vector n = numeric_gradient(params, [&] { return scalar_value(build); });
  EXPECT_LT(max_relative_error(a, n), 1e-4);
}

TEST(Autodiff, ElementwiseAndLinearOps) {
  Rng rng(1);
  ad::Parameter a("a", random_matrix(4, 3, rng), true);
  ad::Parameter b("b", random_matrix(4, 3, rng), true);
  ad::Parameter w("w", random_matrix(3, 2, rng), true);
  ad::Parameter r("r", random_matrix(1, 3, rng), false);
  ad::Parameter pos("pos", (random_matrix(4, 3, rng).array().abs() + 0.5).matrix(), false);
  const ad::ParameterList params{&a, &b, &w, &r, &pos};
  using Build = std::function<ad::Var(ad::Tape&)>;
  const Build cases[] = {
      [&](ad::Tape& t) { return contract(ad::matmul(t.parameter(a), t.parameter(w)), 1); },
      [&](ad::Tape& t) { return contract(t.parameter(a) + t.parameter(b), 2); },
      [&](ad::Tape& t) { return contract(t.parameter(a) - t.parameter(b), 3); },
      [&](ad::Tape& t) { return contract(ad::mul(t.parameter(a), t.parameter(b)), 4); },
      [&](ad::Tape& t) { return contract(t.parameter(a) * 2.5, 5); },
      [&](ad::Tape& t) { return contract(ad::add_row(t.parameter(a), t.parameter(r)), 6); },
      [&](ad::Tape& t) { return contract(ad::add_scalar(t.parameter(a), 0.3), 7); },
      [&](ad::Tape& t) { return contract(ad::tanh(t.parameter(a)), 8); },
      [&](ad::Tape& t) { return contract(ad::silu(t.parameter(a)), 9); },
      [&](ad::Tape& t) { return contract(ad::exp(t.parameter(a)), 10); },
      [&](ad::Tape& t) { return contract(ad::log(t.parameter(pos)), 11); },
      [&](ad::Tape& t) { return contract(ad::square(t.parameter(a)), 12); },
      [&](ad::Tape& t) { return contract(ad::sum_rows(t.parameter(a)), 13); },
      [&](ad::Tape& t) { return ad::mean(ad::square(t.parameter(b))); },
      [&](ad::Tape& t) { return contract(ad::concat_cols(t.parameter(a), t.parameter(b)), 14); },
      [&](ad::Tape& t) { return contract(ad::slice_cols(t.parameter(a), 1, 2), 15); },
      [&](ad::Tape& t) { return contract(ad::gather_cols(t.parameter(a), {2, 0, 2}), 16); },
      [&](ad::Tape& t) { return contract(ad::repeat_rows(t.parameter(a), 3), 17); },
      [&](ad::Tape& t) { return contract(ad::segment_mean(t.parameter(a), 2), 18); },
      [&](ad::Tape& t) { return contract(ad::clamp_min(t.parameter(a), -0.2), 19); },
      [&](ad::Tape& t) {
        return contract(ad::set_attention(t.parameter(a), t.parameter(b), ad::tanh(t.parameter(a)), 2), 20);
      },
  };
  for (const auto& build : cases) expect_gradients_match(params, build);
}

TEST(Autodiff, SegmentVarianceGradient) {
  Rng rng(2);
  ad::Parameter a("a", random_matrix(12, 1, rng), true);
  std::vector<bool> include(12, true);
  include[3] = false;
  expect_gradients_match({&a}, [&](ad::Tape& t) { return contract(ad::segment_variance(t.parameter(a), 4, include), 3); });
}

TEST(Autodiff, SegmentVarianceMatchesTwoPassOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Index k = 2 + static_cast<Index>(rng.uniform() * 20);
    const Index groups = 1 + static_cast<Index>(rng.uniform() * 5);
    const Matrix x = random_matrix(k * groups, 1, rng, 1.0 + 10.0 * rng.uniform());
    ad::Tape tape(false);
    const Matrix v = ad::segment_variance(tape.constant(x), k, std::vector<bool>(static_cast<std::size_t>(k * groups), true)).value();
    for (Index g = 0; g < groups; ++g) {
      double mean = 0.0;
      for (Index i = 0; i < k; ++i) mean += x(g * k + i, 0);
      mean /= static_cast<double>(k);
      double ss = 0.0;
      for (Index i = 0; i < k; ++i) ss += (x(g * k + i, 0) - mean) * (x(g * k + i, 0) - mean);
      const double oracle = ss / static_cast<double>(k - 1);
      EXPECT_NEAR(v(g, 0), oracle, 1e-12 * std::max(1.0, oracle));
    }
  }
}

TEST(Autodiff, SegmentVarianceDegenerateGroups) {
  ad::Tape tape(false);
  Matrix x(4, 1);
  x << 1.0, 5.0, 2.0, 2.0;
  long degenerate = 0;
  const Matrix v =
      ad::segment_variance(tape.constant(x), 2, {true, false, true, true}, &degenerate).value();
  EXPECT_EQ(v(0, 0), 0.0);
  EXPECT_EQ(v(1, 0), 0.0);
  EXPECT_EQ(degenerate, 1);
}

TEST(Autodiff, SegmentMeanIsExactlyPermutationInvariant) {
  Rng rng(4);
  const Index k = 37;
  const Matrix x = random_matrix(k, 5, rng, 100.0);
  ad::Tape tape(false);
  const Matrix ref = ad::segment_mean(tape.constant(x), k).value();
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    Matrix shuffled(k, x.cols());
    for (Index i = 0; i < k; ++i) shuffled.row(i) = x.row(order[static_cast<std::size_t>(i)]);
    EXPECT_EQ(ad::segment_mean(tape.constant(shuffled), k).value(), ref);
  }
}

TEST(Autodiff, ClampMinCountsEvents) {
  ad::Tape tape(false);
  Matrix x(3, 1);
  x << -5.0, 0.0, -1e7;
  long clamped = 0;
  const Matrix y = ad::clamp_min(tape.constant(x), -1e6, &clamped).value();
  EXPECT_EQ(clamped, 1);
  EXPECT_EQ(y(2, 0), -1e6);
}

TEST(Autodiff, MlpGradient) {
  Rng rng(6);
  nn::Mlp mlp(3, {5, 4}, 2, nn::Activation::kSilu, rng, "mlp");
  ad::ParameterList params;
  mlp.collect_parameters(params);
  const Matrix x = random_matrix(6, 3, rng);
  expect_gradients_match(params, [&](ad::Tape& t) { return contract(mlp.forward(t.constant(x)), 7); });
  nn::Mlp tanh_mlp(3, {4}, 2, nn::Activation::kTanh, rng, "mlp2");
  ad::ParameterList p2;
  tanh_mlp.collect_parameters(p2);
  expect_gradients_match(p2, [&](ad::Tape& t) { return contract(tanh_mlp.forward(t.constant(x)), 8); });
}

TEST(Autodiff, ZeroedOutputLayerGivesZero) {
  Rng rng(7);
  nn::Mlp mlp(3, {8}, 4, nn::Activation::kSilu, rng, "mlp");
  mlp.zero_output_layer();
  EXPECT_EQ(mlp.evaluate(random_matrix(5, 3, rng)), Matrix::Zero(5, 4));
}

TEST(Autodiff, BackwardAccumulatesIntoParameters) {
  ad::Parameter p("p", Matrix::Constant(1, 1, 3.0), true);
  for (int i = 0; i < 2; ++i) {
    ad::Tape tape;
    tape.backward(ad::sum(ad::square(tape.parameter(p))));
  }
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 12.0);
}

TEST(Autodiff, ShapeMismatchThrows) {
  ad::Tape tape;
  EXPECT_THROW(ad::add(tape.constant(Matrix::Zero(2, 2)), tape.constant(Matrix::Zero(2, 3))), ContractError);
  EXPECT_THROW(ad::matmul(tape.constant(Matrix::Zero(2, 2)), tape.constant(Matrix::Zero(3, 3))), ContractError);
}

}  // namespace
}  // namespace scabi
