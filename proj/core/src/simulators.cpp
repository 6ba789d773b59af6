#include "scabi/simulators.hpp"

#include <cmath>

namespace scabi::simulators {

namespace {

constexpr double kLogPi = 1.14472988584940017414;

double log_normal(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void check_theta(const Task& task, const Vector& theta) {
  require(theta.size() == task.param_dim(), task.name() + ": parameter dimension mismatch");
}

void check_data(const Task& task, const Matrix& data) {
  require(data.rows() == task.data_shape().rows && data.cols() == task.data_shape().cols,
          task.name() + ": data shape mismatch");
}

}  // namespace

RowVector flatten(const Matrix& data) {
  RowVector flat(data.size());
  for (Index r = 0; r < data.rows(); ++r) flat.segment(r * data.cols(), data.cols()) = data.row(r);
  return flat;
}

Matrix unflatten(const Eigen::Ref<const RowVector>& flat, const DataShape& shape) {
  require(flat.size() == shape.flat(), "unflatten: size mismatch");
  Matrix out(shape.rows, shape.cols);
  for (int r = 0; r < shape.rows; ++r) out.row(r) = flat.segment(static_cast<Index>(r) * shape.cols, shape.cols);
  return out;
}

double Task::loglik(const Matrix&, const Vector&) const {
  throw ContractError(name() + ": no explicit likelihood");
}

// Conjugate Gaussian --------------------------------------------------------

ConjugateGaussian::ConjugateGaussian(int rows, double prior_sd, double noise_sd)
    : Task(DistributionSpec::gaussian(Vector::Zero(1), Vector::Constant(1, prior_sd)), {rows, 1}),
      prior_sd_(prior_sd),
      noise_sd_(noise_sd) {
  require(rows >= 1 && prior_sd > 0.0 && noise_sd > 0.0, "conjugate_gaussian: invalid constants");
}

Matrix ConjugateGaussian::simulate(const Vector& theta, Rng& rng) const {
  check_theta(*this, theta);
  Matrix y(shape_.rows, 1);
  for (Index j = 0; j < y.rows(); ++j) y(j, 0) = rng.normal(theta(0), noise_sd_);
  return y;
}

double ConjugateGaussian::loglik(const Matrix& data, const Vector& theta) const {
  check_data(*this, data);
  check_theta(*this, theta);
  double total = 0.0;
  for (Index j = 0; j < data.rows(); ++j) total += log_normal(data(j, 0), theta(0), noise_sd_);
  return total;
}

double ConjugateGaussian::posterior_variance() const {
  return 1.0 / (1.0 / (prior_sd_ * prior_sd_) + shape_.rows / (noise_sd_ * noise_sd_));
}

double ConjugateGaussian::posterior_mean(const Matrix& data) const {
  check_data(*this, data);
  return posterior_variance() * data.sum() / (noise_sd_ * noise_sd_);
}

double ConjugateGaussian::log_marginal(const Matrix& data) const {
  check_data(*this, data);
  // Y ~ N(0, s^2 I + t^2 11^T); determinant and inverse in closed form.
  const double s2 = noise_sd_ * noise_sd_;
  const double t2 = prior_sd_ * prior_sd_;
  const double j = static_cast<double>(data.rows());
  const double sum = data.sum();
  const double sq = data.squaredNorm();
  const double log_det = (j - 1.0) * std::log(s2) + std::log(s2 + j * t2);
  const double quad = sq / s2 - t2 * sum * sum / (s2 * (s2 + j * t2));
  return -0.5 * (j * kLog2Pi + log_det + quad);
}

nlohmann::json ConjugateGaussian::constants() const {
  return {{"rows", shape_.rows}, {"prior_sd", prior_sd_}, {"noise_sd", noise_sd_}};
}

// Gaussian mixture ----------------------------------------------------------

GaussianMixture::GaussianMixture(int rows) : Task(DistributionSpec::standard_normal(2), {rows, 2}) {
  require(rows >= 1, "gmm: rows must be >= 1");
}

Matrix GaussianMixture::simulate(const Vector& theta, Rng& rng) const {
  check_theta(*this, theta);
  const double sd = std::sqrt(0.5);
  Matrix y(shape_.rows, 2);
  for (Index j = 0; j < y.rows(); ++j) {
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    y(j, 0) = rng.normal(sign * theta(0), sd);
    y(j, 1) = rng.normal(sign * theta(1), sd);
  }
  return y;
}

double GaussianMixture::loglik(const Matrix& data, const Vector& theta) const {
  check_data(*this, data);
  check_theta(*this, theta);
  // log N(y; mu, I/2) in two dimensions = -log(pi) - |y - mu|^2.
  double total = 0.0;
  for (Index j = 0; j < data.rows(); ++j) {
    const double plus = (data.row(j).transpose() - theta).squaredNorm();
    const double minus = (data.row(j).transpose() + theta).squaredNorm();
    total += std::log(0.5) - kLogPi + log_sum_exp(-plus, -minus);
  }
  return total;
}

nlohmann::json GaussianMixture::constants() const { return {{"rows", shape_.rows}}; }

// Two moons -----------------------------------------------------------------

TwoMoons::TwoMoons(double radius_mean, double radius_sd)
    : Task(DistributionSpec::uniform_box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0)), {1, 2}),
      radius_mean_(radius_mean),
      radius_sd_(radius_sd) {
  require(radius_sd > 0.0, "two_moons: radius_sd must be positive");
}

namespace {

Vector moons_shift(const Vector& theta) {
  Vector s(2);
  s << -std::abs(theta(0) + theta(1)) / std::sqrt(2.0), (-theta(0) + theta(1)) / std::sqrt(2.0);
  return s;
}

}  // namespace

Matrix TwoMoons::simulate(const Vector& theta, Rng& rng) const {
  check_theta(*this, theta);
  const double a = rng.uniform(-0.5 * kPi, 0.5 * kPi);
  const double r = rng.normal(radius_mean_, radius_sd_);
  const Vector shift = moons_shift(theta);
  Matrix y(1, 2);
  y << r * std::cos(a) + 0.25 + shift(0), r * std::sin(a) + shift(1);
  return y;
}

double TwoMoons::loglik(const Matrix& data, const Vector& theta) const {
  check_data(*this, data);
  check_theta(*this, theta);
  const Vector shift = moons_shift(theta);
  const double u1 = data(0, 0) - shift(0) - 0.25;
  const double u2 = data(0, 1) - shift(1);
  const double r = std::hypot(u1, u2);
  if (r == 0.0) return kNegInf;
  const double a = std::atan2(u2, u1);
  if (!(a > -0.5 * kPi && a < 0.5 * kPi)) return kNegInf;
  return log_normal(r, radius_mean_, radius_sd_) - kLogPi - std::log(r);
}

nlohmann::json TwoMoons::constants() const {
  return {{"radius_mean", radius_mean_}, {"radius_sd", radius_sd_}};
}

// Source location -----------------------------------------------------------

Matrix SourceLocation::default_points() {
  Matrix p(30, 2);
  int k = 0;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 5; ++j) {
      p(k, 0) = -4.0 + 8.0 * i / 5.0;
      p(k, 1) = -4.0 + 8.0 * j / 4.0;
      ++k;
    }
  }
  return p;
}

SourceLocation::SourceLocation(SourceConstants c, Matrix points)
    : Task(DistributionSpec::standard_normal(2), {static_cast<int>(points.rows()), 3}),
      c_(c),
      points_(std::move(points)) {
  require(points_.cols() == 2 && points_.rows() >= 1, "source: points must be k x 2");
  require(c_.sigma > 0.0 && c_.max_signal > 0.0, "source: invalid constants");
}

double SourceLocation::intensity(const Vector& theta, double x1, double x2) const {
  const double d1 = theta(0) - x1;
  const double d2 = theta(1) - x2;
  return c_.background + c_.alpha / (c_.max_signal + d1 * d1 + d2 * d2);
}

Matrix SourceLocation::simulate(const Vector& theta, Rng& rng) const {
  check_theta(*this, theta);
  Matrix y(points_.rows(), 3);
  for (Index i = 0; i < points_.rows(); ++i) {
    y(i, 0) = points_(i, 0);
    y(i, 1) = points_(i, 1);
    y(i, 2) = rng.normal(intensity(theta, points_(i, 0), points_(i, 1)), c_.sigma);
  }
  return y;
}

double SourceLocation::loglik(const Matrix& data, const Vector& theta) const {
  check_data(*this, data);
  check_theta(*this, theta);
  double total = 0.0;
  for (Index i = 0; i < data.rows(); ++i) {
    total += log_normal(data(i, 2), intensity(theta, data(i, 0), data(i, 1)), c_.sigma);
  }
  return total;
}

nlohmann::json SourceLocation::constants() const {
  nlohmann::json pts = nlohmann::json::array();
  for (Index i = 0; i < points_.rows(); ++i) pts.push_back({points_(i, 0), points_(i, 1)});
  return {{"sigma", c_.sigma},
          {"alpha", c_.alpha},
          {"background", c_.background},
          {"max_signal", c_.max_signal},
          {"points", pts}};
}

// ODE -----------------------------------------------------------------------

Matrix ode_integrate(const OdeRhs& rhs, const Vector& initial, const std::vector<double>& times, double step) {
  require(step > 0.0, "ode_integrate: step must be positive");
  const Index dim = initial.size();
  Matrix out(static_cast<Index>(times.size()), dim);
  Vector s = initial;
  Vector k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  long done = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const long target = std::llround(times[i] / step);
    require(target >= done && std::abs(target * step - times[i]) < 1e-9 * std::max(1.0, times[i]),
            "ode_integrate: observation times must be increasing multiples of the step");
    for (; done < target; ++done) {
      const double t = static_cast<double>(done) * step;
      rhs(t, s, k1);
      tmp = s + 0.5 * step * k1;
      rhs(t + 0.5 * step, tmp, k2);
      tmp = s + 0.5 * step * k2;
      rhs(t + 0.5 * step, tmp, k3);
      tmp = s + step * k3;
      rhs(t + step, tmp, k4);
      s += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!s.allFinite()) throw SimulationRejected("ode_integrate: non-finite state");
    }
    out.row(static_cast<Index>(i)) = s.transpose();
  }
  return out;
}

// Hes1 ----------------------------------------------------------------------

Hes1::Hes1(Hes1Constants c)
    : Task(DistributionSpec::gamma_product((Vector(4) << 2.0, 10.0, 2.0, 2.0).finished(),
                                           (Vector(4) << 1.0, 1.0, 50.0, 50.0).finished(), true),
           {static_cast<int>(c.times.size()), 1}),
      c_(std::move(c)) {
  require(c_.initial.size() == 3, "hes1: initial state must have 3 entries");
}

OdeRhs Hes1::rhs(double p0, double h, double k1, double nu) const {
  const double kdeg = c_.k_deg;
  return [=](double, const Vector& s, Vector& ds) {
    ds(0) = -kdeg * s(0) + 1.0 / (1.0 + std::pow(s(2) / p0, h));
    ds(1) = -kdeg * s(1) + nu * s(0) - k1 * s(1);
    ds(2) = -kdeg * s(2) + k1 * s(1);
  };
}

Matrix Hes1::trajectory(const Vector& theta) const {
  check_theta(*this, theta);
  const Vector p = theta.array().exp();
  return ode_integrate(rhs(p(0), p(1), p(2), p(3)), c_.initial, c_.times, c_.step);
}

Matrix Hes1::simulate(const Vector& theta, Rng& rng) const {
  const Matrix traj = trajectory(theta);
  Matrix y(traj.rows(), 1);
  for (Index t = 0; t < y.rows(); ++t) y(t, 0) = rng.normal(traj(t, 0), 1.0);
  return y;
}

double Hes1::loglik(const Matrix& data, const Vector& theta) const {
  check_data(*this, data);
  Matrix traj;
  try {
    traj = trajectory(theta);
  } catch (const SimulationRejected&) {
    return kNegInf;
  }
  double total = 0.0;
  for (Index t = 0; t < data.rows(); ++t) total += log_normal(data(t, 0), traj(t, 0), 1.0);
  return total;
}

Matrix Hes1::real_data() {
  Matrix y(8, 1);
  y << 1.20, 5.90, 4.58, 2.64, 5.38, 6.42, 5.60, 4.48;
  return y;
}

nlohmann::json Hes1::constants() const {
  return {{"k_deg", c_.k_deg},
          {"initial", std::vector<double>(c_.initial.data(), c_.initial.data() + 3)},
          {"step", c_.step},
          {"times", c_.times}};
}

// SIR -----------------------------------------------------------------------

Sir::Sir(SirConstants c)
    : Task(DistributionSpec::gaussian((Vector(2) << std::log(0.4), std::log(0.125)).finished(),
                                      (Vector(2) << 0.5, 0.2).finished()),
           {c.observations, 1}),
      c_(c) {
  require(c_.observations >= 1 && c_.population > 0.0 && c_.trials >= 1, "sir: invalid constants");
}

std::vector<double> Sir::times() const {
  std::vector<double> t(static_cast<std::size_t>(c_.observations));
  for (int i = 0; i < c_.observations; ++i) t[static_cast<std::size_t>(i)] = c_.horizon * (i + 1) / c_.observations;
  return t;
}

Vector Sir::infected_fraction(double beta, double gamma) const {
  const double n = c_.population;
  OdeRhs rhs = [=](double, const Vector& s, Vector& ds) {
    const double infection = beta * s(0) * s(1) / n;
    ds(0) = -infection;
    ds(1) = infection - gamma * s(1);
    ds(2) = gamma * s(1);
  };
  Vector init(3);
  init << n - c_.initial_infected, c_.initial_infected, 0.0;
  const Matrix traj = ode_integrate(rhs, init, times(), c_.step);
  return (traj.col(1).array() / n).max(0.0).min(1.0);
}

Matrix Sir::simulate(const Vector& theta, Rng& rng) const {
  check_theta(*this, theta);
  const Vector p = infected_fraction(std::exp(theta(0)), std::exp(theta(1)));
  Matrix y(p.size(), 1);
  for (Index t = 0; t < p.size(); ++t) y(t, 0) = static_cast<double>(rng.binomial(c_.trials, p(t)));
  return y;
}

double Sir::loglik(const Matrix& data, const Vector& theta) const {
  check_data(*this, data);
  check_theta(*this, theta);
  Vector p;
  try {
    p = infected_fraction(std::exp(theta(0)), std::exp(theta(1)));
  } catch (const SimulationRejected&) {
    return kNegInf;
  }
  const double n = static_cast<double>(c_.trials);
  double total = 0.0;
  for (Index t = 0; t < p.size(); ++t) {
    const double k = data(t, 0);
    if (k < 0.0 || k > n || k != std::floor(k)) return kNegInf;
    const double log_choose = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    double term = log_choose;
    if (k > 0.0) term += p(t) > 0.0 ? k * std::log(p(t)) : kNegInf;
    if (k < n) term += p(t) < 1.0 ? (n - k) * std::log1p(-p(t)) : kNegInf;
    total += term;
  }
  return total;
}

nlohmann::json Sir::constants() const {
  return {{"population", c_.population},
          {"initial_infected", c_.initial_infected},
          {"trials", c_.trials},
          {"step", c_.step},
          {"observations", c_.observations},
          {"horizon", c_.horizon}};
}

// Factory -------------------------------------------------------------------

std::unique_ptr<Task> make_task(const nlohmann::json& config) {
  const std::string name = config.at("name").get<std::string>();
  if (name == "conjugate_gaussian") {
    return std::make_unique<ConjugateGaussian>(config.value("rows", 1), config.value("prior_sd", 1.0),
                                               config.value("noise_sd", 1.0));
  }
  if (name == "gmm") return std::make_unique<GaussianMixture>(config.value("rows", 10));
  if (name == "two_moons") {
    return std::make_unique<TwoMoons>(config.value("radius_mean", 0.1), config.value("radius_sd", 0.01));
  }
  if (name == "source") {
    SourceConstants c;
    c.sigma = config.value("sigma", c.sigma);
    c.alpha = config.value("alpha", c.alpha);
    c.background = config.value("background", c.background);
    c.max_signal = config.value("max_signal", c.max_signal);
    Matrix points = SourceLocation::default_points();
    if (config.contains("points")) {
      const auto& pts = config.at("points");
      points.resize(static_cast<Index>(pts.size()), 2);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        points(static_cast<Index>(i), 0) = pts[i].at(0).get<double>();
        points(static_cast<Index>(i), 1) = pts[i].at(1).get<double>();
      }
    }
    return std::make_unique<SourceLocation>(c, std::move(points));
  }
  if (name == "hes1") {
    Hes1Constants c;
    c.k_deg = config.value("k_deg", c.k_deg);
    c.step = config.value("step", c.step);
    if (config.contains("times")) c.times = config.at("times").get<std::vector<double>>();
    if (config.contains("initial")) {
      const auto init = config.at("initial").get<std::vector<double>>();
      require(init.size() == 3, "hes1: initial state must have 3 entries");
      c.initial = Eigen::Map<const Vector>(init.data(), 3);
    }
    return std::make_unique<Hes1>(c);
  }
  if (name == "sir") {
    SirConstants c;
    c.population = config.value("population", c.population);
    c.initial_infected = config.value("initial_infected", c.initial_infected);
    c.trials = config.value("trials", c.trials);
    c.step = config.value("step", c.step);
    c.observations = config.value("observations", c.observations);
    c.horizon = config.value("horizon", c.horizon);
    return std::make_unique<Sir>(c);
  }
  throw ConfigError("unknown task '" + name + "'");
}

}  // namespace scabi::simulators
