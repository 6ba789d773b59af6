#pragma once

#include "scabi/autodiff.hpp"

// Monotone rational-quadratic spline on [-bound, bound] with identity tails.
//
// Each transformed coordinate is driven by 3*bins - 1 unconstrained values:
// bin widths (bins), bin heights (bins) and the interior knot derivatives
// (bins - 1). The boundary derivatives are fixed at 1 so the spline joins the
// identity tails smoothly. All-zero raw values give the identity map.
namespace scabi::spline {

struct SplineConfig {
  int bins = 8;
  double bound = 5.0;
  double min_width = 1e-3;
  double min_height = 1e-3;
  double min_derivative = 1e-3;

  int params_per_dim() const { return 3 * bins - 1; }
  void validate() const;
};

struct Transformed {
  Matrix y;
  Vector logdet;  // summed over coordinates, one entry per row
};

// x: n x m; raw: n x (m * params_per_dim).
Transformed forward(const Matrix& x, const Matrix& raw, const SplineConfig& config);
Transformed inverse(const Matrix& y, const Matrix& raw, const SplineConfig& config);

// Differentiable forward pass. Output is n x (m + 1): the transformed
// coordinates followed by the per-row log-determinant.
ad::Var transform(ad::Var x, ad::Var raw, const SplineConfig& config);

}  // namespace scabi::spline
