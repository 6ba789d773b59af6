#pragma once

#include <memory>
#include <optional>

#include "scabi/flows.hpp"
#include "scabi/simulators.hpp"
#include "scabi/summaries.hpp"

namespace scabi::models {

// q(theta | Y). Data sets are passed flattened, one per row.
class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;

  virtual int param_dim() const = 0;
  // Conditioning representation for a batch of data sets (n x c).
  virtual ad::Var encode(ad::Tape& tape, const Matrix& data) const = 0;
  // log q(theta_i | cond_i), n x 1.
  virtual ad::Var log_prob(ad::Var theta, ad::Var cond) const = 0;
  // `per_row` draws for each conditioning row, grouped consecutively. Latent
  // draws are scaled by `scale` (1 draws from q itself).
  virtual Matrix sample(const Matrix& cond, Index per_row, Rng& rng, double scale = 1.0) const = 0;
  virtual void collect_parameters(ad::ParameterList&) {}

  Vector log_prob(const Matrix& theta, const Matrix& data) const;
  Matrix sample_for(const RowVector& data, Index n, Rng& rng) const;
};

class NeuralPosterior final : public PosteriorModel {
 public:
  NeuralPosterior(flows::ConditionalFlow flow, std::optional<summaries::SummaryNet> summary);

  int param_dim() const override { return flow_.dim(); }
  ad::Var encode(ad::Tape& tape, const Matrix& data) const override;
  using PosteriorModel::log_prob;
  ad::Var log_prob(ad::Var theta, ad::Var cond) const override;
  Matrix sample(const Matrix& cond, Index per_row, Rng& rng, double scale = 1.0) const override;
  void collect_parameters(ad::ParameterList& out) override;

  flows::ConditionalFlow& flow() { return flow_; }
  const flows::ConditionalFlow& flow() const { return flow_; }
  bool has_summary() const { return summary_.has_value(); }
  summaries::SummaryNet& summary() { return *summary_; }
  const summaries::SummaryNet& summary() const { return *summary_; }

 private:
  flows::ConditionalFlow flow_;
  std::optional<summaries::SummaryNet> summary_;
};

// Analytic posterior of the conjugate Gaussian task, optionally with its
// variance multiplied by `variance_factor` (1 is exact).
class ConjugatePosterior final : public PosteriorModel {
 public:
  explicit ConjugatePosterior(const simulators::ConjugateGaussian& task, double variance_factor = 1.0);

  int param_dim() const override { return 1; }
  ad::Var encode(ad::Tape& tape, const Matrix& data) const override;
  using PosteriorModel::log_prob;
  ad::Var log_prob(ad::Var theta, ad::Var cond) const override;
  Matrix sample(const Matrix& cond, Index per_row, Rng& rng, double scale = 1.0) const override;

 private:
  const simulators::ConjugateGaussian* task_;
  double variance_factor_;
};

// p(Y | theta) or q(Y | theta).
class LikelihoodModel {
 public:
  virtual ~LikelihoodModel() = default;
  // log density of data row i given theta row i, n x 1. Theta is a constant
  // input (training parameters or proposal draws).
  virtual ad::Var log_prob(ad::Tape& tape, const Matrix& data, const Matrix& theta) const = 0;
  virtual bool trainable() const { return false; }
  virtual void collect_parameters(ad::ParameterList&) {}

  Vector log_prob(const Matrix& data, const Matrix& theta) const;
};

class ExplicitLikelihood final : public LikelihoodModel {
 public:
  explicit ExplicitLikelihood(const simulators::Task& task);
  using LikelihoodModel::log_prob;
  ad::Var log_prob(ad::Tape& tape, const Matrix& data, const Matrix& theta) const override;

 private:
  const simulators::Task* task_;
};

// Flow over the flattened data conditioned on theta.
class NeuralLikelihood final : public LikelihoodModel {
 public:
  explicit NeuralLikelihood(flows::ConditionalFlow flow) : flow_(std::move(flow)) {}
  using LikelihoodModel::log_prob;
  ad::Var log_prob(ad::Tape& tape, const Matrix& data, const Matrix& theta) const override;
  bool trainable() const override { return true; }
  void collect_parameters(ad::ParameterList& out) override { flow_.collect_parameters(out); }

  // Posterior-predictive style draws of flattened data sets.
  Matrix sample(const RowVector& theta, Index n, Rng& rng) const { return flow_.sample(theta, n, rng); }

  flows::ConditionalFlow& flow() { return flow_; }
  const flows::ConditionalFlow& flow() const { return flow_; }

 private:
  flows::ConditionalFlow flow_;
};

}  // namespace scabi::models
