#include "scabi/flows.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace scabi::flows {

std::string to_string(CouplingKind kind) {
  return kind == CouplingKind::kAffine ? "affine" : "spline";
}

CouplingKind coupling_kind_from_string(const std::string& name) {
  if (name == "affine") return CouplingKind::kAffine;
  if (name == "spline" || name == "rq-spline") return CouplingKind::kSpline;
  throw ConfigError("unknown coupling kind '" + name + "'");
}

void FlowSpec::validate() const {
  require(dim >= 1, "flow: dim must be >= 1");
  require(cond_dim >= 1, "flow: cond_dim must be >= 1");
  require(layers >= 1, "flow: need at least one coupling layer");
  require(affine_clamp >= 0.0, "flow: affine_clamp must be >= 0");
  for (int h : hidden) require(h >= 1, "flow: hidden sizes must be positive");
  require(base.kind == DistributionKind::kDiagonalGaussian || base.kind == DistributionKind::kStudentT,
          "flow: base must be gaussian or student-t");
  require(base.dim() == dim, "flow: base dimension mismatch");
  base.validate();
  if (coupling == CouplingKind::kSpline) spline.validate();
}

void to_json(nlohmann::json& j, const FlowSpec& s) {
  j = nlohmann::json{{"dim", s.dim},
                     {"cond_dim", s.cond_dim},
                     {"coupling", to_string(s.coupling)},
                     {"layers", s.layers},
                     {"hidden", s.hidden},
                     {"activation", nn::to_string(s.activation)},
                     {"bins", s.spline.bins},
                     {"bound", s.spline.bound},
                     {"affine_clamp", s.affine_clamp},
                     {"base", s.base.kind == DistributionKind::kStudentT ? "student-t" : "gaussian"},
                     {"dof", s.base.dof},
                     {"permutation_seed", s.permutation_seed}};
}

void from_json(const nlohmann::json& j, FlowSpec& s) {
  s = FlowSpec{};
  s.dim = j.value("dim", 1);
  s.cond_dim = j.value("cond_dim", 1);
  s.coupling = coupling_kind_from_string(j.value("coupling", std::string("spline")));
  s.layers = j.value("layers", 4);
  s.hidden = j.value("hidden", std::vector<int>{128, 128});
  s.activation = nn::activation_from_string(j.value("activation", std::string("silu")));
  s.spline.bins = j.value("bins", 8);
  s.spline.bound = j.value("bound", 5.0);
  s.affine_clamp = j.value("affine_clamp", 1.9);
  const std::string base = j.value("base", std::string("gaussian"));
  if (base == "student-t") {
    s.base = DistributionSpec::student_t(s.dim, j.value("dof", 30.0));
  } else if (base == "gaussian" || base == "diagonal-gaussian") {
    s.base = DistributionSpec::standard_normal(s.dim);
  } else {
    throw ConfigError("unknown flow base '" + base + "'");
  }
  s.permutation_seed = j.value("permutation_seed", std::uint64_t{0});
}

Standardizer Standardizer::identity(int dim) {
  return {Vector::Zero(dim), Vector::Ones(dim)};
}

Standardizer Standardizer::fit(const Matrix& x) {
  require(x.rows() >= 1, "Standardizer::fit: empty input");
  Standardizer s;
  s.shift = x.colwise().mean().transpose();
  s.scale = Vector::Ones(x.cols());
  if (x.rows() >= 2) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.shift(j)).square().sum() / static_cast<double>(x.rows() - 1);
      const double sd = std::sqrt(var);
      if (sd > 1e-8 * std::max(1.0, std::abs(s.shift(j)))) s.scale(j) = sd;
    }
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  require(x.cols() == shift.size(), "Standardizer: dimension mismatch");
  return (x.rowwise() - shift.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix Standardizer::invert(const Matrix& x) const {
  require(x.cols() == shift.size(), "Standardizer: dimension mismatch");
  return (x.array().rowwise() * scale.transpose().array()).matrix().rowwise() + shift.transpose();
}

double Standardizer::log_scale_sum() const { return scale.array().log().sum(); }

void to_json(nlohmann::json& j, const Standardizer& s) {
  j = nlohmann::json{{"shift", std::vector<double>(s.shift.data(), s.shift.data() + s.shift.size())},
                     {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
  const auto shift = j.at("shift").get<std::vector<double>>();
  const auto scale = j.at("scale").get<std::vector<double>>();
  require(shift.size() == scale.size(), "Standardizer: shift/scale size mismatch");
  s.shift = Eigen::Map<const Vector>(shift.data(), static_cast<Index>(shift.size()));
  s.scale = Eigen::Map<const Vector>(scale.data(), static_cast<Index>(scale.size()));
}

namespace {

int conditioner_outputs(const FlowSpec& spec, std::size_t transformed) {
  const int m = static_cast<int>(transformed);
  return spec.coupling == CouplingKind::kAffine ? 2 * m : m * spec.spline.params_per_dim();
}

// Transforms the `transformed` block given conditioner output h; returns
// [y | logdet].
ad::Var couple(const FlowSpec& spec, ad::Var xt, ad::Var h) {
  const Index m = xt.cols();
  if (spec.coupling == CouplingKind::kAffine) {
    ad::Var s = ad::slice_cols(h, 0, m);
    if (spec.affine_clamp > 0.0) s = ad::tanh(s * (1.0 / spec.affine_clamp)) * spec.affine_clamp;
    const ad::Var t = ad::slice_cols(h, m, m);
    const ad::Var y = ad::add(ad::mul(xt, ad::exp(s)), t);
    return ad::concat_cols(y, ad::sum_rows(s));
  }
  return spline::transform(xt, h, spec.spline);
}

Matrix gather(const Matrix& x, const std::vector<int>& index) {
  Matrix out(x.rows(), static_cast<Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) out.col(static_cast<Index>(j)) = x.col(index[j]);
  return out;
}

}  // namespace

ConditionalFlow::ConditionalFlow(const FlowSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  x_norm_ = Standardizer::identity(spec_.dim);
  c_norm_ = Standardizer::identity(spec_.cond_dim);
  Rng perm_rng(spec_.permutation_seed);
  const int d = spec_.dim;
  for (int l = 0; l < spec_.layers; ++l) {
    CouplingLayer layer;
    if (d == 1) {
      layer.transformed = {0};
    } else if (d == 2) {
      layer.identity = {l % 2};
      layer.transformed = {1 - l % 2};
    } else {
      std::vector<int> perm(static_cast<std::size_t>(d));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), perm_rng.engine());
      const auto half = perm.begin() + d / 2;
      layer.identity.assign(perm.begin(), half);
      layer.transformed.assign(half, perm.end());
      std::sort(layer.identity.begin(), layer.identity.end());
      std::sort(layer.transformed.begin(), layer.transformed.end());
    }
    std::vector<int> order = layer.identity;
    order.insert(order.end(), layer.transformed.begin(), layer.transformed.end());
    layer.merge.assign(static_cast<std::size_t>(d), 0);
    for (std::size_t p = 0; p < order.size(); ++p) layer.merge[static_cast<std::size_t>(order[p])] = static_cast<int>(p);
    const int in = static_cast<int>(layer.identity.size()) + spec_.cond_dim;
    layer.conditioner = nn::Mlp(in, spec_.hidden, conditioner_outputs(spec_, layer.transformed.size()),
                                spec_.activation, rng, "coupling" + std::to_string(l));
    layer.conditioner.zero_output_layer();
    layers_.push_back(std::move(layer));
  }
}

void ConditionalFlow::set_standardizers(Standardizer target, Standardizer cond) {
  require(target.shift.size() == spec_.dim && cond.shift.size() == spec_.cond_dim,
          "flow: standardizer dimension mismatch");
  x_norm_ = std::move(target);
  c_norm_ = std::move(cond);
}

ad::Var ConditionalFlow::forward_var(ad::Var x, ad::Var cond) const {
  require(x.cols() == spec_.dim && cond.cols() == spec_.cond_dim, "flow: input dimension mismatch");
  require(x.rows() == cond.rows(), "flow: row count mismatch");
  ad::Tape& tape = *x.tape();
  const Index n = x.rows();
  const ad::Var x_inv_scale = tape.constant(x_norm_.scale.cwiseInverse().transpose());
  const ad::Var x_shift = tape.constant((-x_norm_.shift.cwiseQuotient(x_norm_.scale)).transpose());
  ad::Var h = ad::add_row(ad::mul(x, ad::repeat_rows(x_inv_scale, n)), x_shift);
  const ad::Var c_inv_scale = tape.constant(c_norm_.scale.cwiseInverse().transpose());
  const ad::Var c_shift = tape.constant((-c_norm_.shift.cwiseQuotient(c_norm_.scale)).transpose());
  const ad::Var c = ad::add_row(ad::mul(cond, ad::repeat_rows(c_inv_scale, n)), c_shift);

  ad::Var logdet = tape.constant(Matrix::Constant(n, 1, -x_norm_.log_scale_sum()));
  for (const CouplingLayer& layer : layers_) {
    const ad::Var xt = ad::gather_cols(h, layer.transformed);
    ad::Var input = c;
    ad::Var xi;
    if (!layer.identity.empty()) {
      xi = ad::gather_cols(h, layer.identity);
      input = ad::concat_cols(xi, c);
    }
    const ad::Var out = couple(spec_, xt, layer.conditioner.forward(input));
    const Index m = xt.cols();
    const ad::Var yt = ad::slice_cols(out, 0, m);
    logdet = ad::add(logdet, ad::slice_cols(out, m, 1));
    h = layer.identity.empty() ? yt : ad::gather_cols(ad::concat_cols(xi, yt), layer.merge);
  }
  return ad::concat_cols(h, logdet);
}

ad::Var ConditionalFlow::log_prob(ad::Var x, ad::Var cond) const {
  const ad::Var out = forward_var(x, cond);
  const ad::Var z = ad::slice_cols(out, 0, spec_.dim);
  return ad::add(base_log_prob(z, spec_.base), ad::slice_cols(out, spec_.dim, 1));
}

ConditionalFlow::Result ConditionalFlow::forward(const Matrix& x, const Matrix& cond) const {
  ad::Tape tape(false);
  const Matrix out = forward_var(tape.constant(x), tape.constant(cond)).value();
  return {out.leftCols(spec_.dim), out.col(spec_.dim)};
}

Vector ConditionalFlow::log_prob(const Matrix& x, const Matrix& cond) const {
  ad::Tape tape(false);
  return log_prob(tape.constant(x), tape.constant(cond)).value().col(0);
}

ConditionalFlow::Result ConditionalFlow::inverse(const Matrix& z, const Matrix& cond) const {
  require(z.cols() == spec_.dim && cond.cols() == spec_.cond_dim, "flow: input dimension mismatch");
  require(z.rows() == cond.rows(), "flow: row count mismatch");
  const Matrix c = c_norm_.apply(cond);
  Matrix h = z;
  Vector logdet = Vector::Zero(z.rows());
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    const CouplingLayer& layer = *it;
    Matrix input(z.rows(), static_cast<Index>(layer.identity.size()) + c.cols());
    input << gather(h, layer.identity), c;
    const Matrix params = layer.conditioner.evaluate(input);
    const Matrix yt = gather(h, layer.transformed);
    const Index m = yt.cols();
    Matrix xt;
    if (spec_.coupling == CouplingKind::kAffine) {
      Matrix s = params.leftCols(m);
      if (spec_.affine_clamp > 0.0) {
        s = (s.array() / spec_.affine_clamp).tanh() * spec_.affine_clamp;
      }
      xt = ((yt - params.middleCols(m, m)).array() * (-s).array().exp()).matrix();
      logdet -= s.rowwise().sum();
    } else {
      spline::Transformed inv = spline::inverse(yt, params, spec_.spline);
      xt = std::move(inv.y);
      logdet += inv.logdet;
    }
    for (std::size_t j = 0; j < layer.transformed.size(); ++j) {
      h.col(layer.transformed[j]) = xt.col(static_cast<Index>(j));
    }
  }
  logdet.array() += x_norm_.log_scale_sum();
  return {x_norm_.invert(h), logdet};
}

Matrix ConditionalFlow::sample(const RowVector& cond, Index n, Rng& rng, double latent_scale) const {
  require(n >= 1, "flow sample: n must be >= 1");
  require(cond.size() == spec_.cond_dim, "flow sample: cond dimension mismatch");
  Matrix z = scabi::sample(spec_.base, static_cast<int>(n), rng);
  if (latent_scale != 1.0) z *= latent_scale;
  return inverse(z, cond.replicate(n, 1)).z;
}

Matrix ConditionalFlow::sample_rows(const Matrix& cond, Index per_row, Rng& rng) const {
  require(per_row >= 1, "flow sample: per_row must be >= 1");
  const Matrix z = scabi::sample(spec_.base, static_cast<int>(cond.rows() * per_row), rng);
  Matrix c(cond.rows() * per_row, cond.cols());
  for (Index i = 0; i < cond.rows(); ++i) c.middleRows(i * per_row, per_row) = cond.row(i).replicate(per_row, 1);
  return inverse(z, c).z;
}

void ConditionalFlow::collect_parameters(ad::ParameterList& out) {
  for (auto& layer : layers_) layer.conditioner.collect_parameters(out);
}

ad::Var base_log_prob(ad::Var z, const DistributionSpec& base) {
  Matrix value = log_prob_rows(base, z.value());
  return z.tape()->record(std::move(value), {z}, [z, base](ad::Tape& t, const Matrix& g) {
    Matrix grad = log_prob_gradient_rows(base, t.value(z));
    grad.array().colwise() *= g.col(0).array();
    t.accumulate(z, grad);
  });
}

}  // namespace scabi::flows
