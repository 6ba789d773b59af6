#include "scabi/models.hpp"

#include <cmath>

namespace scabi::models {

Vector PosteriorModel::log_prob(const Matrix& theta, const Matrix& data) const {
  ad::Tape tape(false);
  return log_prob(tape.constant(theta), encode(tape, data)).value().col(0);
}

Matrix PosteriorModel::sample_for(const RowVector& data, Index n, Rng& rng) const {
  ad::Tape tape(false);
  return sample(encode(tape, data).value(), n, rng);
}

NeuralPosterior::NeuralPosterior(flows::ConditionalFlow flow, std::optional<summaries::SummaryNet> summary)
    : flow_(std::move(flow)), summary_(std::move(summary)) {
  if (summary_) {
    require(summary_->output_dim() == flow_.cond_dim(), "posterior: summary output must match flow cond_dim");
  }
}

ad::Var NeuralPosterior::encode(ad::Tape& tape, const Matrix& data) const {
  if (summary_) return summary_->forward(tape, data);
  require(data.cols() == flow_.cond_dim(), "posterior: data width must match flow cond_dim");
  return tape.constant(data);
}

ad::Var NeuralPosterior::log_prob(ad::Var theta, ad::Var cond) const { return flow_.log_prob(theta, cond); }

Matrix NeuralPosterior::sample(const Matrix& cond, Index per_row, Rng& rng, double scale) const {
  if (scale == 1.0) return flow_.sample_rows(cond, per_row, rng);
  Matrix out(cond.rows() * per_row, flow_.dim());
  for (Index i = 0; i < cond.rows(); ++i) {
    out.middleRows(i * per_row, per_row) = flow_.sample(cond.row(i), per_row, rng, scale);
  }
  return out;
}

void NeuralPosterior::collect_parameters(ad::ParameterList& out) {
  if (summary_) summary_->collect_parameters(out);
  flow_.collect_parameters(out);
}

ConjugatePosterior::ConjugatePosterior(const simulators::ConjugateGaussian& task, double variance_factor)
    : task_(&task), variance_factor_(variance_factor) {
  require(variance_factor > 0.0, "conjugate posterior: variance factor must be positive");
}

// cond = (posterior mean, posterior sd).
ad::Var ConjugatePosterior::encode(ad::Tape& tape, const Matrix& data) const {
  const auto& shape = task_->data_shape();
  Matrix cond(data.rows(), 2);
  const double sd = std::sqrt(task_->posterior_variance() * variance_factor_);
  for (Index i = 0; i < data.rows(); ++i) {
    cond(i, 0) = task_->posterior_mean(simulators::unflatten(data.row(i), shape));
    cond(i, 1) = sd;
  }
  return tape.constant(cond);
}

ad::Var ConjugatePosterior::log_prob(ad::Var theta, ad::Var cond) const {
  const Matrix& t = theta.value();
  const Matrix& c = cond.value();
  require(t.cols() == 1 && c.cols() == 2 && t.rows() == c.rows(), "conjugate posterior: shape mismatch");
  Matrix out(t.rows(), 1);
  for (Index i = 0; i < t.rows(); ++i) {
    const double z = (t(i, 0) - c(i, 0)) / c(i, 1);
    out(i, 0) = -0.5 * z * z - std::log(c(i, 1)) - 0.5 * kLog2Pi;
  }
  return theta.tape()->constant(std::move(out));
}

Matrix ConjugatePosterior::sample(const Matrix& cond, Index per_row, Rng& rng, double scale) const {
  Matrix out(cond.rows() * per_row, 1);
  for (Index i = 0; i < cond.rows(); ++i) {
    for (Index k = 0; k < per_row; ++k) out(i * per_row + k, 0) = cond(i, 0) + scale * cond(i, 1) * rng.normal();
  }
  return out;
}

Vector LikelihoodModel::log_prob(const Matrix& data, const Matrix& theta) const {
  ad::Tape tape(false);
  return log_prob(tape, data, theta).value().col(0);
}

ExplicitLikelihood::ExplicitLikelihood(const simulators::Task& task) : task_(&task) {
  require(task.has_loglik(), task.name() + ": task has no explicit likelihood");
}

ad::Var ExplicitLikelihood::log_prob(ad::Tape& tape, const Matrix& data, const Matrix& theta) const {
  require(data.rows() == theta.rows(), "explicit likelihood: row mismatch");
  Matrix out(data.rows(), 1);
  for (Index i = 0; i < data.rows(); ++i) {
    out(i, 0) = task_->loglik(simulators::unflatten(data.row(i), task_->data_shape()), theta.row(i).transpose());
  }
  return tape.constant(std::move(out));
}

ad::Var NeuralLikelihood::log_prob(ad::Tape& tape, const Matrix& data, const Matrix& theta) const {
  return flow_.log_prob(tape.constant(data), tape.constant(theta));
}

}  // namespace scabi::models
