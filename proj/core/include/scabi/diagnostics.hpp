#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scabi/models.hpp"

namespace scabi::diagnostics {

// Gaussian-kernel MMD (biased V-statistic), sqrt(max(0, MMD^2)).
// bandwidth <= 0 selects the median pairwise distance of the pooled sample
// (1 if that is 0). Symmetric in its arguments bit for bit.
double mmd(const Matrix& x, const Matrix& y, double bandwidth = 0.0);
double median_pairwise_distance(const Matrix& pooled);

// Type-7 (linear interpolation) sample quantile, p in [0, 1].
double quantile(std::vector<double> values, double p);

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double width() const { return upper - lower; }
};
// Mean and central `level` percentile interval of a sample of log marginal
// estimates.
Interval lml_interval(const std::vector<double>& estimates, double level = 0.95);

// log p(theta) + log p(Y | theta) - log q(theta | Y) for `draws` posterior
// draws, using `likelihood` (learned or explicit). Draws outside the prior
// support are dropped.
std::vector<double> log_marginal_estimates(const simulators::Task& task, const models::PosteriorModel& posterior,
                                           const models::LikelihoodModel& likelihood, const RowVector& data,
                                           Index draws, Rng& rng);

// Simulation-based calibration ranks: for each of `rows` (theta*, Y) pairs,
// the number of `draws` posterior samples strictly below theta*, per dimension.
struct SbcResult {
  Matrix ranks;  // rows x D, entries in [0, draws]
  Index draws = 0;
};
SbcResult sbc_ranks(const simulators::Task& task, const models::PosteriorModel& posterior, Index rows, Index draws,
                    std::uint64_t seed);

// ECDF of the ranks against binomial bands. At each rank r < draws the count
// of ranks <= r is Binomial(L, (r + 1) / (draws + 1)) under calibration; the
// band holds the central 1 - alpha' quantiles with alpha' = alpha divided
// by the number of checked points over all dimensions.
struct EcdfBand {
  struct Point {
    int dim;
    Index rank;
    double expected;
    double ecdf;
    double lower;
    double upper;
  };
  std::vector<Point> points;
  bool pass = true;
};
EcdfBand ecdf_band(const SbcResult& sbc, double alpha = 0.05);
// Smallest k with P(Binomial(n, p) <= k) >= q.
Index binomial_quantile(Index n, double p, double q);

// Tabulated posterior on a regular grid over a box that is refined towards the
// high-density region. Supports one or two parameters.
class GridReference {
 public:
  GridReference(const simulators::Task& task, const Matrix& data_set, int resolution = 512, int refinements = 2);
  Matrix sample(Index n, Rng& rng) const;
  double log_evidence() const { return log_evidence_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }

 private:
  Vector lower_;
  Vector upper_;
  int resolution_;
  int dim_;
  std::vector<double> cdf_;
  double log_evidence_ = 0.0;
};

class ReferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampledReference {
  Matrix samples;
  // log p(Y) estimate; NaN when the method does not provide one.
  double log_evidence = std::numeric_limits<double>::quiet_NaN();
  double acceptance_rate = 0.0;
};

// Exact draws by rejection from the prior with acceptance exp(loglik - max).
// The max starts from a pilot of prior draws and, if exceeded later, is
// raised and sampling restarts. Needs a bounded (uniform box) prior. Throws
// ReferenceError when the acceptance rate is below `min_acceptance` after
// `rate_check_trials` trials.
SampledReference rejection_reference(const simulators::Task& task, const Matrix& data_set, Index n, Rng& rng,
                                     double min_acceptance = 1e-4, long rate_check_trials = 100000);

struct MetropolisSpec {
  long burn_in = 20000;
  long thin = 20;
  int pilot = 2000;         // prior draws used to pick the start and initial step
  double target_acceptance = 0.234;
};

// Random-walk Metropolis on the explicit unnormalized posterior with a
// diagonal Gaussian proposal whose per-dimension scale adapts during burn-in
// only. Reports the post-burn-in acceptance rate.
SampledReference metropolis_reference(const simulators::Task& task, const Matrix& data_set, Index n, Rng& rng,
                                      const MetropolisSpec& spec = {});

struct LoglikAtTruth {
  double mean = 0.0;
  double standard_error = 0.0;
};
// Mean of log q(theta*_i | Y_i) over test pairs, with SD / sqrt(M).
LoglikAtTruth loglik_at_truth(const models::PosteriorModel& posterior, const Matrix& theta, const Matrix& data);

// Hash of a test instance (theta*, Y) for pairing rows across reports.
std::string instance_hash(const RowVector& theta, const RowVector& data);

class ComparisonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Paired comparison of a per-instance metric (lower is better). Both reports
// must cover the same instances (by hash), otherwise ComparisonError.
// Instances lacking the metric in either report are skipped.
struct Comparison {
  std::string metric;
  long pairs = 0;
  std::vector<double> deltas;  // a - b, in the order of report a
  double fraction_a_better = 0.0;  // ties count one half
  double wins_a = 0.0;  // ties count one half
  double wins_b = 0.0;
  double median_a = 0.0;
  double median_b = 0.0;
  double sign_test_p = 1.0;  // two-sided
};
Comparison compare_metric(const nlohmann::json& report_a, const nlohmann::json& report_b, const std::string& metric);
bool has_metric(const nlohmann::json& report, const std::string& metric);
double sign_test_p_value(long wins, long losses);

}  // namespace scabi::diagnostics
