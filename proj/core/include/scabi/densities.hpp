#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "scabi/common.hpp"
#include "scabi/rng.hpp"

namespace scabi {

enum class DistributionKind { kDiagonalGaussian, kStudentT, kUniformBox, kGammaProduct };

std::string to_string(DistributionKind kind);
DistributionKind distribution_kind_from_string(const std::string& name);

// Priors and flow base distributions.
//
//   diagonal-gaussian: first = means, second = standard deviations
//   student-t:         multivariate t with identity scale, `dof` degrees of freedom
//   uniform-box:       first = lower bounds, second = upper bounds
//   gamma-product:     first = shapes, second = rates; with `log_space` the
//                      density is over u = log x (Jacobian included)
struct DistributionSpec {
  DistributionKind kind = DistributionKind::kDiagonalGaussian;
  Vector first;
  Vector second;
  double dof = 0.0;
  bool log_space = false;

  int dim() const { return static_cast<int>(first.size()); }
  void validate() const;

  static DistributionSpec standard_normal(int dim);
  static DistributionSpec gaussian(Vector mean, Vector scale);
  static DistributionSpec student_t(int dim, double dof);
  static DistributionSpec uniform_box(Vector lower, Vector upper);
  static DistributionSpec gamma_product(Vector shape, Vector rate, bool log_space = false);
};

void to_json(nlohmann::json& j, const DistributionSpec& spec);
void from_json(const nlohmann::json& j, DistributionSpec& spec);

// Log density; -inf exactly outside the support.
double log_prob(const DistributionSpec& spec, const Eigen::Ref<const Vector>& x);

// Row-wise log density of an n x D matrix.
Vector log_prob_rows(const DistributionSpec& spec, const Matrix& x);

// n x D matrix of draws.
Matrix sample(const DistributionSpec& spec, int n, Rng& rng);

// Gradient of log_prob with respect to x, for the differentiable base kinds
// (gaussian, student-t). Used by flows for the latent density.
Matrix log_prob_gradient_rows(const DistributionSpec& spec, const Matrix& x);

}  // namespace scabi
