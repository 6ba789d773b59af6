#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "scabi/densities.hpp"

namespace scabi {
namespace {

// Midpoint rule over a square grid in one or two dimensions.
double integrate(const DistributionSpec& spec, double lo, double hi, int cells) {
  const double h = (hi - lo) / cells;
  double total = 0.0;
  if (spec.dim() == 1) {
    for (int i = 0; i < cells; ++i) {
      Vector x(1);
      x << lo + (i + 0.5) * h;
      total += std::exp(log_prob(spec, x)) * h;
    }
    return total;
  }
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      Vector x(2);
      x << lo + (i + 0.5) * h, lo + (j + 0.5) * h;
      total += std::exp(log_prob(spec, x)) * h * h;
    }
  }
  return total;
}

TEST(Densities, StandardGaussianAtMode) {
  EXPECT_NEAR(log_prob(DistributionSpec::standard_normal(2), Vector::Zero(2)), -std::log(2 * kPi), 1e-12);
}

TEST(Densities, GammaAtOne) {
  Vector x(1);
  x << 1.0;
  EXPECT_NEAR(log_prob(DistributionSpec::gamma_product(Vector::Constant(1, 2.0), Vector::Ones(1)), x), -1.0,
              1e-12);
}

TEST(Densities, UniformBoxVolume) {
  const auto spec = DistributionSpec::uniform_box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0));
  EXPECT_NEAR(log_prob(spec, Vector::Zero(2)), std::log(1.0 / 16.0), 1e-12);
}

TEST(Densities, OutsideSupportIsNegativeInfinity) {
  const auto box = DistributionSpec::uniform_box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0));
  Vector x(2);
  x << 2.5, 0.0;
  EXPECT_EQ(log_prob(box, x), kNegInf);
  const auto gamma = DistributionSpec::gamma_product(Vector::Constant(1, 2.0), Vector::Ones(1));
  Vector g(1);
  g << -0.5;
  EXPECT_EQ(log_prob(gamma, g), kNegInf);
  g << 0.0;
  EXPECT_EQ(log_prob(gamma, g), kNegInf);
}

TEST(Densities, DimensionMismatchThrows) {
  EXPECT_THROW(log_prob(DistributionSpec::standard_normal(2), Vector::Zero(3)), ContractError);
}

TEST(Densities, InvalidSpecsRejected) {
  EXPECT_THROW(DistributionSpec::gaussian(Vector::Zero(1), Vector::Constant(1, -1.0)).validate(), ContractError);
  EXPECT_THROW(DistributionSpec::uniform_box(Vector::Constant(1, 1.0), Vector::Constant(1, 0.0)).validate(),
               ContractError);
  EXPECT_THROW(DistributionSpec::gamma_product(Vector::Constant(1, 0.0), Vector::Ones(1)).validate(),
               ContractError);
}

TEST(Densities, QuadratureNormalization) {
  Vector mean(2);
  mean << 0.3, -0.2;
  Vector scale(2);
  scale << 0.7, 1.3;
  EXPECT_NEAR(integrate(DistributionSpec::gaussian(mean, scale), -10, 10, 400), 1.0, 1e-3);
  EXPECT_NEAR(integrate(DistributionSpec::student_t(1, 5.0), -400, 400, 200000), 1.0, 1e-3);
  EXPECT_NEAR(integrate(DistributionSpec::student_t(2, 30.0), -25, 25, 500), 1.0, 1e-3);
  EXPECT_NEAR(integrate(DistributionSpec::uniform_box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0)), -3,
                        3, 600),
              1.0, 1e-3);
  EXPECT_NEAR(integrate(DistributionSpec::gamma_product(Vector::Constant(1, 2.0), Vector::Constant(1, 1.5)), 0,
                        60, 200000),
              1.0, 1e-3);
  // Log-space gamma integrates over u = log x.
  EXPECT_NEAR(integrate(DistributionSpec::gamma_product(Vector::Constant(2, 2.0), Vector::Constant(2, 3.0), true),
                        -15, 6, 600),
              1.0, 1e-3);
}

TEST(Densities, SampleMomentsWithinFiveStandardErrors) {
  const int n = 10000;
  Rng rng(5);
  struct Case {
    DistributionSpec spec;
    double mean;
    double var;
  };
  const Case cases[] = {
      {DistributionSpec::uniform_box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0)), 0.0, 16.0 / 12.0},
      {DistributionSpec::gamma_product(Vector::Constant(2, 2.0), Vector::Ones(2)), 2.0, 2.0},
      {DistributionSpec::gaussian(Vector::Constant(2, 1.0), Vector::Constant(2, 2.0)), 1.0, 4.0},
      {DistributionSpec::student_t(2, 10.0), 0.0, 10.0 / 8.0},
  };
  for (const auto& c : cases) {
    const Matrix x = sample(c.spec, n, rng);
    ASSERT_EQ(x.rows(), n);
    for (Index j = 0; j < x.cols(); ++j) {
      const double m = x.col(j).mean();
      const double v = (x.col(j).array() - m).square().sum() / (n - 1);
      EXPECT_NEAR(m, c.mean, 5.0 * std::sqrt(c.var / n));
      EXPECT_NEAR(v, c.var, 0.1 * c.var);
      for (Index i = 0; i < n; ++i) ASSERT_GT(log_prob(c.spec, x.row(i).transpose()), kNegInf);
    }
  }
}

TEST(Densities, UniformAndGammaSampleMeans) {
  Rng rng(11);
  const Matrix u = sample(DistributionSpec::uniform_box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0)),
                          10000, rng);
  EXPECT_LT(u.colwise().mean().cwiseAbs().maxCoeff(), 0.1);
  const Matrix g = sample(DistributionSpec::gamma_product(Vector::Constant(1, 2.0), Vector::Ones(1)), 10000, rng);
  EXPECT_NEAR(g.mean(), 2.0, 0.1);
}

TEST(Densities, SamplingIsDeterministic) {
  const auto spec = DistributionSpec::gaussian(Vector::Zero(3), Vector::Ones(3));
  Rng a(42);
  Rng b(42);
  EXPECT_EQ(sample(spec, 50, a), sample(spec, 50, b));
}

TEST(Densities, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (const auto& spec : {DistributionSpec::gaussian(Vector::Constant(3, 0.5), Vector::Constant(3, 2.0)),
                           DistributionSpec::student_t(3, 7.0)}) {
    const Matrix x = sample(spec, 5, rng);
    const Matrix g = log_prob_gradient_rows(spec, x);
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.cols(); ++j) {
        Vector up = x.row(i).transpose();
        Vector down = up;
        up(j) += 1e-6;
        down(j) -= 1e-6;
        const double fd = (log_prob(spec, up) - log_prob(spec, down)) / 2e-6;
        EXPECT_NEAR(g(i, j), fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(Densities, JsonRoundTrip) {
  const auto spec = DistributionSpec::gamma_product(Vector::Constant(2, 2.0), Vector::Constant(2, 50.0), true);
  const nlohmann::json j = spec;
  const auto back = j.get<DistributionSpec>();
  EXPECT_EQ(back.kind, spec.kind);
  EXPECT_EQ(back.first, spec.first);
  EXPECT_EQ(back.second, spec.second);
  EXPECT_TRUE(back.log_space);
}

}  // namespace
}  // namespace scabi
