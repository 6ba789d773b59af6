#pragma once

#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "scabi/densities.hpp"

namespace scabi::simulators {

// Shape of one simulated data set: `rows` observations of `cols` values.
// Data sets travel flattened row-major as rows * cols values.
struct DataShape {
  int rows = 1;
  int cols = 1;
  int flat() const { return rows * cols; }
};

RowVector flatten(const Matrix& data);
Matrix unflatten(const Eigen::Ref<const RowVector>& flat, const DataShape& shape);

class Task {
 public:
  virtual ~Task() = default;

  virtual std::string name() const = 0;
  const DistributionSpec& prior() const { return prior_; }
  int param_dim() const { return prior_.dim(); }
  const DataShape& data_shape() const { return shape_; }
  // Rows are i.i.d. given theta; such tasks use a summary network.
  virtual bool exchangeable() const { return false; }

  // One data set (rows x cols). May throw SimulationRejected.
  virtual Matrix simulate(const Vector& theta, Rng& rng) const = 0;

  virtual bool has_loglik() const { return false; }
  // log p(Y | theta) for Y given as rows x cols.
  virtual double loglik(const Matrix& data, const Vector& theta) const;

  double log_prior(const Vector& theta) const { return log_prob(prior_, theta); }
  Matrix sample_prior(int n, Rng& rng) const { return sample(prior_, n, rng); }

  // Task constants for reports and resolved configs.
  virtual nlohmann::json constants() const = 0;

 protected:
  Task(DistributionSpec prior, DataShape shape) : prior_(std::move(prior)), shape_(shape) {}

  DistributionSpec prior_;
  DataShape shape_;
};

// theta ~ N(0, tau^2), y_j | theta ~ N(theta, sigma^2), j = 1..J.
class ConjugateGaussian final : public Task {
 public:
  explicit ConjugateGaussian(int rows = 1, double prior_sd = 1.0, double noise_sd = 1.0);
  std::string name() const override { return "conjugate_gaussian"; }
  bool exchangeable() const override { return shape_.rows > 1; }
  Matrix simulate(const Vector& theta, Rng& rng) const override;
  bool has_loglik() const override { return true; }
  double loglik(const Matrix& data, const Vector& theta) const override;
  nlohmann::json constants() const override;

  // Exact posterior N(mean, var) and log evidence for a data set.
  double posterior_mean(const Matrix& data) const;
  double posterior_variance() const;
  double log_marginal(const Matrix& data) const;

 private:
  double prior_sd_;
  double noise_sd_;
};

// y_j ~ 0.5 N(theta, I/2) + 0.5 N(-theta, I/2), theta ~ N(0, I).
class GaussianMixture final : public Task {
 public:
  explicit GaussianMixture(int rows = 10);
  std::string name() const override { return "gmm"; }
  bool exchangeable() const override { return true; }
  Matrix simulate(const Vector& theta, Rng& rng) const override;
  bool has_loglik() const override { return true; }
  double loglik(const Matrix& data, const Vector& theta) const override;
  nlohmann::json constants() const override;
};

class TwoMoons final : public Task {
 public:
  TwoMoons(double radius_mean = 0.1, double radius_sd = 0.01);
  std::string name() const override { return "two_moons"; }
  Matrix simulate(const Vector& theta, Rng& rng) const override;
  bool has_loglik() const override { return true; }
  double loglik(const Matrix& data, const Vector& theta) const override;
  nlohmann::json constants() const override;

 private:
  double radius_mean_;
  double radius_sd_;
};

struct SourceConstants {
  double sigma = 0.5;
  double alpha = 1.0;
  double background = 0.1;
  double max_signal = 1e-4;  // m
};

// Signal b + alpha / (m + |theta - x|^2) observed with N(0, sigma^2) noise
// at fixed measurement points; rows are (x1, x2, y).
class SourceLocation final : public Task {
 public:
  explicit SourceLocation(SourceConstants c = {}, Matrix points = default_points());
  std::string name() const override { return "source"; }
  bool exchangeable() const override { return true; }
  Matrix simulate(const Vector& theta, Rng& rng) const override;
  bool has_loglik() const override { return true; }
  double loglik(const Matrix& data, const Vector& theta) const override;
  nlohmann::json constants() const override;

  double intensity(const Vector& theta, double x1, double x2) const;
  const Matrix& points() const { return points_; }
  // 6 x 5 lattice over [-4, 4]^2.
  static Matrix default_points();

 private:
  SourceConstants c_;
  Matrix points_;
};

using OdeRhs = std::function<void(double t, const Vector& state, Vector& derivative)>;

// Classical fixed-step RK4 from t = 0. Returns one row per entry of `times`
// (each must be a multiple of `step`). Throws SimulationRejected when the
// state becomes non-finite.
Matrix ode_integrate(const OdeRhs& rhs, const Vector& initial, const std::vector<double>& times, double step);

struct Hes1Constants {
  double k_deg = 0.03;
  Vector initial = (Vector(3) << 2.0, 5.0, 3.0).finished();  // m0, p1, p2
  double step = 0.5;
  std::vector<double> times{30, 60, 90, 120, 150, 180, 210, 240};
};

// theta = log(p0, h, k1, nu); y_t ~ N(m_t, 1).
class Hes1 final : public Task {
 public:
  explicit Hes1(Hes1Constants c = {});
  std::string name() const override { return "hes1"; }
  Matrix simulate(const Vector& theta, Rng& rng) const override;
  bool has_loglik() const override { return true; }
  double loglik(const Matrix& data, const Vector& theta) const override;
  nlohmann::json constants() const override;

  // m, p1, p2 at the observation times for natural-scale parameters.
  Matrix trajectory(const Vector& theta) const;
  OdeRhs rhs(double p0, double h, double k1, double nu) const;
  static Matrix real_data();

 private:
  Hes1Constants c_;
};

struct SirConstants {
  double population = 1e6;
  double initial_infected = 1.0;
  long trials = 1000;
  double step = 0.1;
  int observations = 160;  // at t = 1, ..., observations
  double horizon = 160.0;
};

// theta = (log beta, log gamma); y_t ~ Binomial(trials, I_t / population).
class Sir final : public Task {
 public:
  explicit Sir(SirConstants c = {});
  std::string name() const override { return "sir"; }
  Matrix simulate(const Vector& theta, Rng& rng) const override;
  bool has_loglik() const override { return true; }
  double loglik(const Matrix& data, const Vector& theta) const override;
  nlohmann::json constants() const override;

  // Infectious fraction I_t / population at the observation times.
  Vector infected_fraction(double beta, double gamma) const;
  std::vector<double> times() const;

 private:
  SirConstants c_;
};

// {"name": "gmm", ...task options}
std::unique_ptr<Task> make_task(const nlohmann::json& config);

}  // namespace scabi::simulators
