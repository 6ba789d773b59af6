#include "scabi/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace scabi::objectives {

namespace {

// Throws TrainingError naming the first non-finite row.
void check_finite(const Matrix& values, const char* what) {
  for (Index i = 0; i < values.rows(); ++i) {
    if (!std::isfinite(values(i, 0))) {
      throw TrainingError(std::string(what) + ": non-finite log density for batch item " + std::to_string(i), i);
    }
  }
}

Matrix repeat_rows(const Matrix& x, Index times) {
  Matrix out(x.rows() * times, x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.middleRows(i * times, times) = x.row(i).replicate(times, 1);
  return out;
}

}  // namespace

void SelfConsistencyConfig::validate() const {
  require(K >= 2, "self-consistency: K must be >= 2");
  require(proposal_scale > 0.0, "self-consistency: proposal_scale must be positive");
}

void to_json(nlohmann::json& j, const SelfConsistencyConfig& c) {
  j = nlohmann::json{{"K", c.K},
                     {"likelihood", c.source == LikelihoodSource::kExplicit ? "explicit" : "learned"},
                     {"proposal_scale", c.proposal_scale},
                     {"clamp", c.clamp}};
}

void from_json(const nlohmann::json& j, SelfConsistencyConfig& c) {
  c = SelfConsistencyConfig{};
  c.K = j.value("K", c.K);
  const std::string src = j.value("likelihood", std::string("explicit"));
  if (src == "explicit") {
    c.source = LikelihoodSource::kExplicit;
  } else if (src == "learned") {
    c.source = LikelihoodSource::kLearned;
  } else {
    throw ConfigError("self_consistency.likelihood must be 'explicit' or 'learned'");
  }
  c.proposal_scale = j.value("proposal_scale", 1.0);
  c.clamp = j.value("clamp", -1e6);
  c.validate();
}

ad::Var npe_loss(const models::PosteriorModel& posterior, const Batch& batch, ad::Var cond) {
  require(batch.theta.rows() >= 1, "npe_loss: empty batch");
  ad::Tape& tape = *cond.tape();
  const ad::Var lp = posterior.log_prob(tape.constant(batch.theta), cond);
  check_finite(lp.value(), "npe_loss");
  return ad::mean(lp) * -1.0;
}

ad::Var npe_loss(ad::Tape& tape, const models::PosteriorModel& posterior, const Batch& batch) {
  require(batch.theta.rows() >= 1, "npe_loss: empty batch");
  return npe_loss(posterior, batch, posterior.encode(tape, batch.data));
}

ad::Var likelihood_loss(ad::Tape& tape, const models::LikelihoodModel& likelihood, const Batch& batch) {
  require(batch.theta.rows() >= 1, "likelihood_loss: empty batch");
  const ad::Var lp = likelihood.log_prob(tape, batch.data, batch.theta);
  check_finite(lp.value(), "likelihood_loss");
  return ad::mean(lp) * -1.0;
}

ad::Var nple_loss(ad::Tape& tape, const models::PosteriorModel& posterior,
                  const models::LikelihoodModel& likelihood, const Batch& batch) {
  return npe_loss(tape, posterior, batch) + likelihood_loss(tape, likelihood, batch);
}

MarginalEstimates log_marginal_estimate(ad::Tape& tape, const Matrix& theta, const Matrix& data, ad::Var cond,
                                        const DistributionSpec& prior, const models::LikelihoodModel& likelihood,
                                        const models::PosteriorModel& posterior, double clamp, ScStats* stats) {
  require(theta.rows() == data.rows() && theta.rows() == cond.rows(), "log_marginal_estimate: row mismatch");
  const Index m = theta.rows();
  MarginalEstimates out;
  out.include.assign(static_cast<std::size_t>(m), true);
  Matrix log_prior(m, 1);
  long clamped = 0;
  for (Index r = 0; r < m; ++r) {
    const double lp = log_prob(prior, theta.row(r).transpose());
    if (lp == kNegInf) {
      out.include[static_cast<std::size_t>(r)] = false;
      log_prior(r, 0) = 0.0;
      if (stats) ++stats->excluded;
    } else if (lp < clamp) {
      log_prior(r, 0) = clamp;
      ++clamped;
    } else {
      log_prior(r, 0) = lp;
    }
  }
  const ad::Var lik_raw = likelihood.log_prob(tape, data, theta);
  const ad::Var q_raw = posterior.log_prob(tape.constant(theta), cond);
  for (Index r = 0; r < m; ++r) {
    if (!out.include[static_cast<std::size_t>(r)]) continue;
    const double a = lik_raw.value()(r, 0);
    const double b = q_raw.value()(r, 0);
    if (std::isnan(a) || std::isnan(b) || a == std::numeric_limits<double>::infinity() ||
        b == std::numeric_limits<double>::infinity()) {
      throw TrainingError("log_marginal_estimate: invalid log density at draw " + std::to_string(r), r);
    }
  }
  const ad::Var lik = ad::clamp_min(lik_raw, clamp, &clamped);
  const ad::Var q = ad::clamp_min(q_raw, clamp, &clamped);
  ad::Var values = ad::sub(ad::add(tape.constant(std::move(log_prior)), lik), q);
  // Excluded rows may carry non-finite likelihood values; zero them so they
  // cannot leak into the reduction.
  bool dirty = false;
  for (Index r = 0; r < m; ++r) dirty = dirty || (!out.include[static_cast<std::size_t>(r)] && !std::isfinite(values.value()(r, 0)));
  if (dirty) {
    Matrix mask(m, 1);
    for (Index r = 0; r < m; ++r) mask(r, 0) = out.include[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
    Matrix v = values.value();
    for (Index r = 0; r < m; ++r) {
      if (!out.include[static_cast<std::size_t>(r)]) v(r, 0) = 0.0;
    }
    const ad::Var src = values;
    values = tape.record(std::move(v), {src}, [src, mask](ad::Tape& t, const Matrix& g) {
      t.accumulate(src, g.cwiseProduct(mask));
    });
  }
  if (stats) stats->clamped += clamped;
  out.values = values;
  return out;
}

ad::Var self_consistency_terms(ad::Tape& tape, const Matrix& data, ad::Var cond, const DistributionSpec& prior,
                               const models::LikelihoodModel& likelihood, const models::PosteriorModel& posterior,
                               const SelfConsistencyConfig& cfg, Rng& rng, ScStats* stats) {
  cfg.validate();
  require(data.rows() == cond.rows(), "self_consistency: row mismatch");
  const Index k = cfg.K;
  const Matrix draws = posterior.sample(cond.value(), k, rng, cfg.proposal_scale);
  MarginalEstimates est;
  try {
    est = log_marginal_estimate(tape, draws, repeat_rows(data, k), ad::repeat_rows(cond, k), prior, likelihood,
                                posterior, cfg.clamp, stats);
  } catch (const TrainingError& e) {
    const long item = e.item() < 0 ? -1 : e.item() / static_cast<long>(k);
    throw TrainingError("self_consistency: invalid log density for batch item " + std::to_string(item), item);
  }
  long degenerate = 0;
  const ad::Var var = ad::segment_variance(est.values, k, est.include, &degenerate);
  if (stats) stats->degenerate += degenerate;
  return var;
}

ad::Var self_consistency_loss(ad::Tape& tape, const Matrix& data, const DistributionSpec& prior,
                              const models::LikelihoodModel& likelihood, const models::PosteriorModel& posterior,
                              const SelfConsistencyConfig& cfg, Rng& rng, ScStats* stats) {
  const ad::Var cond = posterior.encode(tape, data);
  return ad::mean(self_consistency_terms(tape, data, cond, prior, likelihood, posterior, cfg, rng, stats));
}

LossParts combined_loss(ad::Tape& tape, const models::PosteriorModel& posterior,
                        const models::LikelihoodModel* learned, const models::LikelihoodModel* explicit_likelihood,
                        const DistributionSpec& prior, const Batch& batch, double lambda,
                        const SelfConsistencyConfig& cfg, Rng& rng) {
  require(lambda >= 0.0, "combined_loss: lambda must be >= 0");
  LossParts parts;
  const ad::Var cond = posterior.encode(tape, batch.data);
  ad::Var base = npe_loss(posterior, batch, cond);
  if (learned != nullptr) base = base + likelihood_loss(tape, *learned, batch);
  parts.base = base.value()(0, 0);
  parts.total = base;
  if (lambda == 0.0) return parts;
  const models::LikelihoodModel* lik = cfg.source == LikelihoodSource::kLearned ? learned : explicit_likelihood;
  require(lik != nullptr, cfg.source == LikelihoodSource::kLearned
                              ? "combined_loss: self-consistency needs a learned likelihood"
                              : "combined_loss: self-consistency needs an explicit likelihood");
  const ad::Var sc =
      ad::mean(self_consistency_terms(tape, batch.data, cond, prior, *lik, posterior, cfg, rng, &parts.stats));
  parts.sc = sc.value()(0, 0);
  parts.total = base + sc * lambda;
  return parts;
}

void ScheduleSpec::validate() const {
  if (kind == Kind::kStepwise) {
    for (const Step& s : steps) {
      require(s.value >= 0.0, "schedule: lambda must be >= 0");
      require(s.threshold >= 0.0, "schedule: thresholds must be >= 0");
      require(!(s.threshold == 0.0 && s.value != 0.0), "schedule: mu(0) must be 0");
      if (s.fraction) require(s.threshold <= 1.0, "schedule: fractions must be in [0, 1]");
    }
  } else {
    require(ramp_value >= 0.0, "schedule: lambda must be >= 0");
    require(ramp_start >= 0.0 && ramp_end > ramp_start, "schedule: ramp needs 0 <= start < end");
  }
}

void to_json(nlohmann::json& j, const ScheduleSpec& s) {
  if (s.kind == ScheduleSpec::Kind::kLinearRamp) {
    j = nlohmann::json{{"kind", "linear-ramp"}, {"start", s.ramp_start}, {"end", s.ramp_end}, {"value", s.ramp_value}};
    return;
  }
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : s.steps) {
    steps.push_back({{st.fraction ? "fraction" : "epoch", st.threshold}, {"value", st.value}});
  }
  j = nlohmann::json{{"kind", "stepwise"}, {"steps", steps}};
}

void from_json(const nlohmann::json& j, ScheduleSpec& s) {
  s = ScheduleSpec{};
  const std::string kind = j.value("kind", std::string("stepwise"));
  if (kind == "linear-ramp") {
    s.kind = ScheduleSpec::Kind::kLinearRamp;
    s.ramp_start = j.value("start", 0.0);
    s.ramp_end = j.value("end", 1.0);
    s.ramp_value = j.value("value", 1.0);
  } else if (kind == "stepwise") {
    for (const auto& st : j.value("steps", nlohmann::json::array())) {
      ScheduleSpec::Step step;
      if (st.contains("fraction")) {
        step.fraction = true;
        step.threshold = st.at("fraction").get<double>();
      } else {
        step.threshold = st.at("epoch").get<double>();
      }
      step.value = st.at("value").get<double>();
      s.steps.push_back(step);
    }
  } else {
    throw ConfigError("unknown schedule kind '" + kind + "'");
  }
  s.validate();
}

double schedule_weight(const ScheduleSpec& spec, int epoch, int total_epochs) {
  require(epoch >= 0, "schedule_weight: epoch must be >= 0");
  if (spec.kind == ScheduleSpec::Kind::kLinearRamp) {
    const double t = (epoch - spec.ramp_start) / (spec.ramp_end - spec.ramp_start);
    return spec.ramp_value * std::clamp(t, 0.0, 1.0);
  }
  double value = 0.0;
  double best = -1.0;
  for (const auto& st : spec.steps) {
    const double at = st.fraction ? static_cast<double>(std::llround(st.threshold * total_epochs)) : st.threshold;
    if (at <= epoch && at >= best) {
      best = at;
      value = st.value;
    }
  }
  return value;
}

}  // namespace scabi::objectives
