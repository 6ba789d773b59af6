#include "scabi/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace scabi::diagnostics {

namespace {

bool lexicographically_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) != b(i, j)) return a(i, j) < b(i, j);
    }
  }
  return false;
}

double mean_kernel(const Matrix& a, const Matrix& b, double inv_two_h2) {
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (Index j = 0; j < b.rows(); ++j) row += std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv_two_h2);
    total += row;
  }
  return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double median_pairwise_distance(const Matrix& pooled) {
  const Index n = pooled.rows();
  if (n < 2) return 0.0;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) d.push_back((pooled.row(i) - pooled.row(j)).norm());
  }
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  const double upper = d[mid];
  if (d.size() % 2 == 1) return upper;
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double mmd(const Matrix& x_in, const Matrix& y_in, double bandwidth) {
  require(x_in.rows() >= 1 && y_in.rows() >= 1, "mmd: empty sample");
  require(x_in.cols() == y_in.cols(), "mmd: dimension mismatch");
  const bool swap = lexicographically_less(y_in, x_in);
  const Matrix& x = swap ? y_in : x_in;
  const Matrix& y = swap ? x_in : y_in;
  double h = bandwidth;
  if (h <= 0.0) {
    Matrix pooled(x.rows() + y.rows(), x.cols());
    pooled << x, y;
    h = median_pairwise_distance(pooled);
    if (!(h > 0.0)) h = 1.0;
  }
  const double inv = 1.0 / (2.0 * h * h);
  const double value = mean_kernel(x, x, inv) + mean_kernel(y, y, inv) - 2.0 * mean_kernel(x, y, inv);
  return std::sqrt(std::max(0.0, value));
}

double quantile(std::vector<double> values, double p) {
  require(!values.empty(), "quantile: empty sample");
  require(p >= 0.0 && p <= 1.0, "quantile: p must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

Interval lml_interval(const std::vector<double>& estimates, double level) {
  require(level > 0.0 && level < 1.0, "lml_interval: level must be in (0, 1)");
  const double tail = 0.5 * (1.0 - level);
  double sum = 0.0;
  for (double e : estimates) sum += e;
  return {sum / static_cast<double>(estimates.size()), quantile(estimates, tail), quantile(estimates, 1.0 - tail)};
}

std::vector<double> log_marginal_estimates(const simulators::Task& task, const models::PosteriorModel& posterior,
                                           const models::LikelihoodModel& likelihood, const RowVector& data,
                                           Index draws, Rng& rng) {
  const Matrix theta = posterior.sample_for(data, draws, rng);
  const Matrix rep = data.replicate(draws, 1);
  const Vector lq = posterior.log_prob(theta, rep);
  const Vector ll = likelihood.log_prob(rep, theta);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(draws));
  for (Index k = 0; k < draws; ++k) {
    const double lp = task.log_prior(theta.row(k).transpose());
    if (lp == kNegInf) continue;
    out.push_back(lp + ll(k) - lq(k));
  }
  return out;
}

SbcResult sbc_ranks(const simulators::Task& task, const models::PosteriorModel& posterior, Index rows, Index draws,
                    std::uint64_t seed) {
  require(rows >= 1 && draws >= 1, "sbc_ranks: rows and draws must be >= 1");
  SbcResult out;
  out.draws = draws;
  out.ranks.resize(rows, task.param_dim());
  for (Index i = 0; i < rows; ++i) {
    Rng rng = Rng::stream(seed, SeedDomain::kSbc, static_cast<std::uint64_t>(i));
    Vector theta;
    Matrix y;
    for (int attempt = 0;; ++attempt) {
      theta = task.sample_prior(1, rng).row(0).transpose();
      try {
        y = task.simulate(theta, rng);
        break;
      } catch (const SimulationRejected&) {
        if (attempt >= 100) throw SimulationError("sbc_ranks: simulator keeps rejecting");
      }
    }
    const Matrix s = posterior.sample_for(simulators::flatten(y), draws, rng);
    for (Index d = 0; d < s.cols(); ++d) {
      out.ranks(i, d) = static_cast<double>((s.col(d).array() < theta(d)).count());
    }
  }
  return out;
}

Index binomial_quantile(Index n, double p, double q) {
  require(n >= 0 && p >= 0.0 && p <= 1.0, "binomial_quantile: invalid arguments");
  if (p == 0.0) return 0;
  if (p == 1.0) return n;
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
  double cdf = 0.0;
  for (Index k = 0; k <= n; ++k) {
    const auto kd = static_cast<double>(k);
    cdf += std::exp(lgn - std::lgamma(kd + 1.0) - std::lgamma(static_cast<double>(n - k) + 1.0) + kd * lp +
                    static_cast<double>(n - k) * lq);
    if (cdf >= q) return k;
  }
  return n;
}

EcdfBand ecdf_band(const SbcResult& sbc, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "ecdf_band: alpha must be in (0, 1)");
  const Index l = sbc.ranks.rows();
  const Index m = sbc.draws;
  const auto dims = static_cast<int>(sbc.ranks.cols());
  const double adj = alpha / static_cast<double>(std::max<Index>(1, m * dims));
  EcdfBand band;
  for (int d = 0; d < dims; ++d) {
    for (Index r = 0; r < m; ++r) {
      const double p = static_cast<double>(r + 1) / static_cast<double>(m + 1);
      const auto count = (sbc.ranks.col(d).array() <= static_cast<double>(r)).count();
      EcdfBand::Point pt{d,
                         r,
                         p,
                         static_cast<double>(count) / static_cast<double>(l),
                         static_cast<double>(binomial_quantile(l, p, 0.5 * adj)) / static_cast<double>(l),
                         static_cast<double>(binomial_quantile(l, p, 1.0 - 0.5 * adj)) / static_cast<double>(l)};
      band.pass = band.pass && pt.ecdf >= pt.lower && pt.ecdf <= pt.upper;
      band.points.push_back(pt);
    }
  }
  return band;
}

GridReference::GridReference(const simulators::Task& task, const Matrix& data_set, int resolution, int refinements)
    : resolution_(resolution), dim_(task.param_dim()) {
  require(dim_ == 1 || dim_ == 2, "GridReference: only one or two parameters are supported");
  require(task.has_loglik(), "GridReference: task needs an explicit likelihood");
  require(resolution >= 8 && refinements >= 0, "GridReference: invalid resolution");
  const DistributionSpec& prior = task.prior();
  if (prior.kind == DistributionKind::kUniformBox) {
    lower_ = prior.first;
    upper_ = prior.second;
  } else if (prior.kind == DistributionKind::kDiagonalGaussian) {
    lower_ = prior.first - 8.0 * prior.second;
    upper_ = prior.first + 8.0 * prior.second;
  } else {
    throw ContractError("GridReference: prior must be uniform-box or diagonal-gaussian");
  }
  const Index cells = dim_ == 1 ? resolution : static_cast<Index>(resolution) * resolution;
  std::vector<double> logp(static_cast<std::size_t>(cells));
  auto center = [&](Index c, const Vector& lo, const Vector& hi) {
    Vector t(dim_);
    const Index idx[2] = {c % resolution, c / resolution};
    for (int d = 0; d < dim_; ++d) {
      t(d) = lo(d) + (static_cast<double>(idx[d]) + 0.5) * (hi(d) - lo(d)) / resolution;
    }
    return t;
  };
  const Vector outer_lo = lower_;
  const Vector outer_hi = upper_;
  for (int pass = 0; pass <= refinements; ++pass) {
    double best = kNegInf;
    for (Index c = 0; c < cells; ++c) {
      const Vector t = center(c, lower_, upper_);
      const double lp = task.log_prior(t);
      const double v = lp == kNegInf ? kNegInf : lp + task.loglik(data_set, t);
      logp[static_cast<std::size_t>(c)] = std::isnan(v) ? kNegInf : v;
      best = std::max(best, logp[static_cast<std::size_t>(c)]);
    }
    require(std::isfinite(best), "GridReference: posterior vanishes on the grid");
    if (pass == refinements) {
      const double area = (upper_ - lower_).prod() / static_cast<double>(cells);
      cdf_.resize(static_cast<std::size_t>(cells));
      double total = 0.0;
      for (Index c = 0; c < cells; ++c) {
        total += std::exp(logp[static_cast<std::size_t>(c)] - best);
        cdf_[static_cast<std::size_t>(c)] = total;
      }
      for (auto& v : cdf_) v /= total;
      log_evidence_ = best + std::log(total * area);
      break;
    }
    // Shrink to the cells within exp(-30) of the mode, padded by two cells.
    Vector lo = Vector::Constant(dim_, std::numeric_limits<double>::infinity());
    Vector hi = -lo;
    for (Index c = 0; c < cells; ++c) {
      if (logp[static_cast<std::size_t>(c)] < best - 30.0) continue;
      const Vector t = center(c, lower_, upper_);
      lo = lo.cwiseMin(t);
      hi = hi.cwiseMax(t);
    }
    const Vector step = (upper_ - lower_) / resolution;
    lower_ = (lo - 2.5 * step).cwiseMax(outer_lo);
    upper_ = (hi + 2.5 * step).cwiseMin(outer_hi);
  }
}

Matrix GridReference::sample(Index n, Rng& rng) const {
  Matrix out(n, dim_);
  for (Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const auto c = static_cast<Index>(std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    const Index cell = std::min<Index>(c, static_cast<Index>(cdf_.size()) - 1);
    const Index idx[2] = {cell % resolution_, cell / resolution_};
    for (int d = 0; d < dim_; ++d) {
      const double w = (upper_(d) - lower_(d)) / resolution_;
      out(i, d) = lower_(d) + (static_cast<double>(idx[d]) + rng.uniform()) * w;
    }
  }
  return out;
}

SampledReference rejection_reference(const simulators::Task& task, const Matrix& data_set, Index n, Rng& rng,
                                     double min_acceptance, long rate_check_trials) {
  require(task.has_loglik(), "rejection_reference: task has no explicit likelihood");
  require(task.prior().kind == DistributionKind::kUniformBox, "rejection_reference: needs a bounded uniform prior");
  require(n >= 1, "rejection_reference: n must be >= 1");
  const int d = task.param_dim();
  double lmax = kNegInf;
  for (int i = 0; i < 1000; ++i) {
    const Vector theta = task.sample_prior(1, rng).row(0).transpose();
    lmax = std::max(lmax, task.loglik(data_set, theta));
  }
  SampledReference out;
  out.samples.resize(n, d);
  Index accepted = 0;
  long trials = 0;
  while (accepted < n) {
    const Vector theta = task.sample_prior(1, rng).row(0).transpose();
    const double ll = task.loglik(data_set, theta);
    ++trials;
    if (ll > lmax) {
      // Envelope was too low; earlier acceptances are biased, start over.
      lmax = ll;
      accepted = 0;
      trials = 1;
    }
    if (std::isfinite(ll) && rng.uniform() < std::exp(ll - lmax)) out.samples.row(accepted++) = theta.transpose();
    if (trials >= rate_check_trials && static_cast<double>(accepted) < min_acceptance * static_cast<double>(trials)) {
      throw ReferenceError(task.name() + ": rejection acceptance rate below " + std::to_string(min_acceptance) +
                           "; use the grid reference");
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(trials);
  out.log_evidence = lmax + std::log(out.acceptance_rate);
  return out;
}

SampledReference metropolis_reference(const simulators::Task& task, const Matrix& data_set, Index n, Rng& rng,
                                      const MetropolisSpec& spec) {
  require(task.has_loglik(), "metropolis_reference: task has no explicit likelihood");
  require(n >= 1 && spec.burn_in >= 0 && spec.thin >= 1 && spec.pilot >= 2, "metropolis_reference: bad settings");
  const int d = task.param_dim();
  auto log_target = [&](const Vector& theta) {
    const double lp = task.log_prior(theta);
    return std::isfinite(lp) ? lp + task.loglik(data_set, theta) : kNegInf;
  };
  const Matrix pilot = task.sample_prior(spec.pilot, rng);
  Vector current = pilot.row(0).transpose();
  double current_lt = log_target(current);
  for (Index i = 1; i < pilot.rows(); ++i) {
    const double lt = log_target(pilot.row(i).transpose());
    if (lt > current_lt) {
      current_lt = lt;
      current = pilot.row(i).transpose();
    }
  }
  require(std::isfinite(current_lt), "metropolis_reference: no pilot draw with finite density");
  const RowVector centered_sd =
      ((pilot.rowwise() - pilot.colwise().mean()).array().square().colwise().sum() / static_cast<double>(pilot.rows() - 1))
          .sqrt();
  Vector step = 0.1 * centered_sd.transpose();
  double log_scale = 0.0;
  SampledReference out;
  out.samples.resize(n, d);
  long accepted = 0;
  long window_accepted = 0;
  const long total = spec.burn_in + n * spec.thin;
  Index kept = 0;
  for (long t = 0; t < total; ++t) {
    Vector proposal = current;
    for (int j = 0; j < d; ++j) proposal(j) += std::exp(log_scale) * step(j) * rng.normal();
    const double lt = log_target(proposal);
    const bool accept = std::isfinite(lt) && std::log(rng.uniform()) < lt - current_lt;
    if (accept) {
      current = proposal;
      current_lt = lt;
    }
    if (t < spec.burn_in) {
      window_accepted += accept ? 1 : 0;
      if ((t + 1) % 100 == 0) {
        log_scale += (static_cast<double>(window_accepted) / 100.0 - spec.target_acceptance);
        window_accepted = 0;
      }
      continue;
    }
    accepted += accept ? 1 : 0;
    if ((t - spec.burn_in + 1) % spec.thin == 0) out.samples.row(kept++) = current.transpose();
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(n * spec.thin);
  return out;
}

LoglikAtTruth loglik_at_truth(const models::PosteriorModel& posterior, const Matrix& theta, const Matrix& data) {
  require(theta.rows() >= 1 && theta.rows() == data.rows(), "loglik_at_truth: invalid input");
  const Vector lp = posterior.log_prob(theta, data);
  const double m = lp.mean();
  const double n = static_cast<double>(lp.size());
  const double var = lp.size() > 1 ? (lp.array() - m).square().sum() / (n - 1.0) : 0.0;
  return {m, std::sqrt(var / n)};
}

std::string instance_hash(const RowVector& theta, const RowVector& data) {
  Fnv1a h;
  h.update(Matrix(theta));
  h.update(Matrix(data));
  return hex64(h.digest());
}

double sign_test_p_value(long wins, long losses) {
  const long n = wins + losses;
  if (n == 0) return 1.0;
  const long k = std::min(wins, losses);
  // P(X <= k) for X ~ Binomial(n, 1/2), doubled.
  double cdf = 0.0;
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
  for (long i = 0; i <= k; ++i) {
    cdf += std::exp(lgn - std::lgamma(static_cast<double>(i) + 1.0) - std::lgamma(static_cast<double>(n - i) + 1.0) -
                    static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, 2.0 * cdf);
}

bool has_metric(const nlohmann::json& report, const std::string& metric) {
  for (const auto& inst : report.at("instances")) {
    if (inst.contains(metric) && inst.at(metric).is_number()) return true;
  }
  return false;
}

Comparison compare_metric(const nlohmann::json& report_a, const nlohmann::json& report_b, const std::string& metric) {
  std::map<std::string, const nlohmann::json*> b_items;
  for (const auto& inst : report_b.at("instances")) b_items[inst.at("hash").get<std::string>()] = &inst;
  std::set<std::string> a_hashes;
  for (const auto& inst : report_a.at("instances")) a_hashes.insert(inst.at("hash").get<std::string>());
  if (a_hashes.size() != b_items.size() ||
      !std::all_of(a_hashes.begin(), a_hashes.end(), [&](const std::string& h) { return b_items.count(h) > 0; })) {
    throw ComparisonError("compare: the reports were evaluated on different instance sets");
  }
  Comparison c;
  c.metric = metric;
  std::vector<double> va;
  std::vector<double> vb;
  long wins = 0;
  long losses = 0;
  for (const auto& inst : report_a.at("instances")) {
    const auto& other = *b_items.at(inst.at("hash").get<std::string>());
    const bool in_a = inst.contains(metric) && inst.at(metric).is_number();
    const bool in_b = other.contains(metric) && other.at(metric).is_number();
    if (!in_a || !in_b) continue;
    const double a = inst.at(metric).get<double>();
    const double b = other.at(metric).get<double>();
    va.push_back(a);
    vb.push_back(b);
    c.deltas.push_back(a - b);
    ++c.pairs;
    if (a < b) {
      c.wins_a += 1.0;
      ++wins;
    } else if (b < a) {
      c.wins_b += 1.0;
      ++losses;
    } else {
      c.wins_a += 0.5;
      c.wins_b += 0.5;
    }
  }
  require(c.pairs > 0, "compare: reports share no instances for metric '" + metric + "'");
  c.fraction_a_better = c.wins_a / static_cast<double>(c.pairs);
  c.median_a = quantile(va, 0.5);
  c.median_b = quantile(vb, 0.5);
  c.sign_test_p = sign_test_p_value(wins, losses);
  return c;
}

}  // namespace scabi::diagnostics
