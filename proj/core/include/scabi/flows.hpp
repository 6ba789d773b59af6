#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scabi/autodiff.hpp"
#include "scabi/densities.hpp"
#include "scabi/nn.hpp"
#include "scabi/spline.hpp"

namespace scabi::flows {

enum class CouplingKind { kAffine, kSpline };

std::string to_string(CouplingKind kind);
CouplingKind coupling_kind_from_string(const std::string& name);

struct FlowSpec {
  int dim = 1;
  int cond_dim = 1;
  CouplingKind coupling = CouplingKind::kSpline;
  int layers = 4;
  std::vector<int> hidden{128, 128};
  nn::Activation activation = nn::Activation::kSilu;
  spline::SplineConfig spline;
  // Affine log-scales pass through c * tanh(s / c); 0 disables the clamp.
  double affine_clamp = 1.9;
  // Latent distribution: standard normal or student-t.
  DistributionSpec base = DistributionSpec::standard_normal(1);
  // Seeds the fixed random permutations used for dim >= 3.
  std::uint64_t permutation_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const FlowSpec& spec);
void from_json(const nlohmann::json& j, FlowSpec& spec);

// Affine standardization x' = (x - shift) / scale, fitted on training data.
struct Standardizer {
  Vector shift;
  Vector scale;

  static Standardizer identity(int dim);
  // Column means and standard deviations; near-constant columns keep scale 1.
  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& x) const;
  double log_scale_sum() const;
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

// One coupling layer. Coordinates in `identity` pass through and, together
// with the conditioning vector, parameterize the transform of `transformed`.
struct CouplingLayer {
  std::vector<int> identity;
  std::vector<int> transformed;
  std::vector<int> merge;  // position of each original coordinate in [identity | transformed]
  nn::Mlp conditioner;
};

class ConditionalFlow {
 public:
  struct Result {
    Matrix z;
    Vector logdet;
  };

  ConditionalFlow() = default;
  // Fresh flow; every coupling starts as the identity map.
  ConditionalFlow(const FlowSpec& spec, Rng& rng);

  const FlowSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  int cond_dim() const { return spec_.cond_dim; }

  const Standardizer& target_standardizer() const { return x_norm_; }
  const Standardizer& cond_standardizer() const { return c_norm_; }
  void set_standardizers(Standardizer target, Standardizer cond);

  // Differentiable pieces. `x` is n x dim, `cond` n x cond_dim (raw, before
  // standardization). forward_var returns [z | logdet].
  ad::Var forward_var(ad::Var x, ad::Var cond) const;
  ad::Var log_prob(ad::Var x, ad::Var cond) const;

  Result forward(const Matrix& x, const Matrix& cond) const;
  Result inverse(const Matrix& z, const Matrix& cond) const;
  Vector log_prob(const Matrix& x, const Matrix& cond) const;

  // n draws for a single conditioning row; latent draws are multiplied by
  // latent_scale before inversion.
  Matrix sample(const RowVector& cond, Index n, Rng& rng, double latent_scale = 1.0) const;
  // One draw per conditioning row, `per_row` consecutive draws each.
  Matrix sample_rows(const Matrix& cond, Index per_row, Rng& rng) const;

  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  void collect_parameters(ad::ParameterList& out);

 private:
  FlowSpec spec_;
  Standardizer x_norm_;
  Standardizer c_norm_;
  std::vector<CouplingLayer> layers_;
};

// Differentiable log density of the latent distribution, n x D -> n x 1.
ad::Var base_log_prob(ad::Var z, const DistributionSpec& base);

}  // namespace scabi::flows
