#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scabi/models.hpp"

namespace scabi::objectives {

struct Batch {
  Matrix theta;  // n x D
  Matrix data;   // n x (J*d), flattened data sets
};

enum class LikelihoodSource { kExplicit, kLearned };

struct SelfConsistencyConfig {
  int K = 10;
  LikelihoodSource source = LikelihoodSource::kExplicit;
  // Proposal = posterior with latent draws scaled by this factor.
  double proposal_scale = 1.0;
  double clamp = -1e6;

  void validate() const;
};

void to_json(nlohmann::json& j, const SelfConsistencyConfig& c);
void from_json(const nlohmann::json& j, SelfConsistencyConfig& c);

// Counters accumulated while evaluating the self-consistency term.
struct ScStats {
  long clamped = 0;      // log densities raised to the clamp floor
  long excluded = 0;     // draws outside the prior support
  long degenerate = 0;   // items with < 2 usable estimates (contribute 0)

  ScStats& operator+=(const ScStats& o) {
    clamped += o.clamped;
    excluded += o.excluded;
    degenerate += o.degenerate;
    return *this;
  }
};

// mean_i -log q(theta_i | Y_i). `cond` is the encoded batch.
ad::Var npe_loss(const models::PosteriorModel& posterior, const Batch& batch, ad::Var cond);
ad::Var npe_loss(ad::Tape& tape, const models::PosteriorModel& posterior, const Batch& batch);
// mean_i -log q(Y_i | theta_i).
ad::Var likelihood_loss(ad::Tape& tape, const models::LikelihoodModel& likelihood, const Batch& batch);
ad::Var nple_loss(ad::Tape& tape, const models::PosteriorModel& posterior,
                  const models::LikelihoodModel& likelihood, const Batch& batch);

// log p(theta) + log p(Y | theta) - log q(theta | Y) for every row, with the
// log densities clamped below at cfg.clamp. Rows whose prior density is zero
// get include[r] = false (and value 0).
struct MarginalEstimates {
  ad::Var values;  // m x 1
  std::vector<bool> include;
};
MarginalEstimates log_marginal_estimate(ad::Tape& tape, const Matrix& theta, const Matrix& data, ad::Var cond,
                                        const DistributionSpec& prior, const models::LikelihoodModel& likelihood,
                                        const models::PosteriorModel& posterior, double clamp, ScStats* stats);

// Per-item sample variance (K - 1 denominator) of K log-marginal estimates
// with proposal draws from the posterior, n x 1. Draws are constants; the
// gradient flows through the density evaluations only.
ad::Var self_consistency_terms(ad::Tape& tape, const Matrix& data, ad::Var cond, const DistributionSpec& prior,
                               const models::LikelihoodModel& likelihood, const models::PosteriorModel& posterior,
                               const SelfConsistencyConfig& cfg, Rng& rng, ScStats* stats);

ad::Var self_consistency_loss(ad::Tape& tape, const Matrix& data, const DistributionSpec& prior,
                              const models::LikelihoodModel& likelihood, const models::PosteriorModel& posterior,
                              const SelfConsistencyConfig& cfg, Rng& rng, ScStats* stats = nullptr);

struct LossParts {
  ad::Var total;
  double base = 0.0;
  double sc = 0.0;  // batch mean of the per-item variances, before lambda
  ScStats stats;
};

// base (NPE, or NPLE when `learned` is given) + lambda * mean SC loss. The SC
// branch is skipped entirely (no rng use) when lambda == 0. The SC term uses
// `learned` or `explicit_likelihood` according to cfg.source.
LossParts combined_loss(ad::Tape& tape, const models::PosteriorModel& posterior,
                        const models::LikelihoodModel* learned, const models::LikelihoodModel* explicit_likelihood,
                        const DistributionSpec& prior, const Batch& batch, double lambda,
                        const SelfConsistencyConfig& cfg, Rng& rng);

// Annealing schedule mu(epoch) for lambda.
struct ScheduleSpec {
  enum class Kind { kStepwise, kLinearRamp };
  struct Step {
    double threshold = 0.0;  // epoch index, or fraction of total epochs
    bool fraction = false;
    double value = 0.0;
  };

  Kind kind = Kind::kStepwise;
  std::vector<Step> steps;   // stepwise: value of the last reached step (0 before the first)
  double ramp_start = 0.0;   // linear ramp: epochs
  double ramp_end = 1.0;
  double ramp_value = 1.0;

  void validate() const;
  static ScheduleSpec constant_zero() { return {}; }
};

void to_json(nlohmann::json& j, const ScheduleSpec& s);
void from_json(const nlohmann::json& j, ScheduleSpec& s);

double schedule_weight(const ScheduleSpec& spec, int epoch, int total_epochs);

}  // namespace scabi::objectives
