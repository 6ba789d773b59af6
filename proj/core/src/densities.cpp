#include "scabi/densities.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace scabi {

namespace {

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

nlohmann::json vector_to_json(const Vector& v) {
  auto out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

double student_t_log_norm(int dim, double dof) {
  return std::lgamma(0.5 * (dof + dim)) - std::lgamma(0.5 * dof) -
         0.5 * dim * std::log(dof * kPi);
}

}  // namespace

std::string to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::kDiagonalGaussian: return "diagonal-gaussian";
    case DistributionKind::kStudentT: return "student-t";
    case DistributionKind::kUniformBox: return "uniform-box";
    case DistributionKind::kGammaProduct: return "gamma-product";
  }
  return "unknown";
}

DistributionKind distribution_kind_from_string(const std::string& name) {
  if (name == "diagonal-gaussian" || name == "gaussian") return DistributionKind::kDiagonalGaussian;
  if (name == "student-t") return DistributionKind::kStudentT;
  if (name == "uniform-box" || name == "uniform") return DistributionKind::kUniformBox;
  if (name == "gamma-product" || name == "gamma") return DistributionKind::kGammaProduct;
  throw ConfigError("unknown distribution kind '" + name + "'");
}

void DistributionSpec::validate() const {
  require(dim() >= 1, "distribution dimension must be positive");
  switch (kind) {
    case DistributionKind::kDiagonalGaussian:
      require(second.size() == first.size(), "gaussian: mean/scale size mismatch");
      require((second.array() > 0.0).all(), "gaussian: scales must be positive");
      break;
    case DistributionKind::kStudentT:
      require(dof > 0.0, "student-t: degrees of freedom must be positive");
      break;
    case DistributionKind::kUniformBox:
      require(second.size() == first.size(), "uniform-box: bound size mismatch");
      require((first.array() < second.array()).all(), "uniform-box: lower must be < upper");
      break;
    case DistributionKind::kGammaProduct:
      require(second.size() == first.size(), "gamma-product: shape/rate size mismatch");
      require((first.array() > 0.0).all() && (second.array() > 0.0).all(),
              "gamma-product: shape and rate must be positive");
      break;
  }
}

DistributionSpec DistributionSpec::standard_normal(int dim) {
  return gaussian(Vector::Zero(dim), Vector::Ones(dim));
}

DistributionSpec DistributionSpec::gaussian(Vector mean, Vector scale) {
  DistributionSpec s;
  s.kind = DistributionKind::kDiagonalGaussian;
  s.first = std::move(mean);
  s.second = std::move(scale);
  s.validate();
  return s;
}

DistributionSpec DistributionSpec::student_t(int dim, double dof) {
  DistributionSpec s;
  s.kind = DistributionKind::kStudentT;
  s.first = Vector::Zero(dim);
  s.second = Vector::Ones(dim);
  s.dof = dof;
  s.validate();
  return s;
}

DistributionSpec DistributionSpec::uniform_box(Vector lower, Vector upper) {
  DistributionSpec s;
  s.kind = DistributionKind::kUniformBox;
  s.first = std::move(lower);
  s.second = std::move(upper);
  s.validate();
  return s;
}

DistributionSpec DistributionSpec::gamma_product(Vector shape, Vector rate, bool log_space) {
  DistributionSpec s;
  s.kind = DistributionKind::kGammaProduct;
  s.first = std::move(shape);
  s.second = std::move(rate);
  s.log_space = log_space;
  s.validate();
  return s;
}

void to_json(nlohmann::json& j, const DistributionSpec& spec) {
  j = nlohmann::json{{"kind", to_string(spec.kind)}};
  switch (spec.kind) {
    case DistributionKind::kDiagonalGaussian:
      j["mean"] = vector_to_json(spec.first);
      j["scale"] = vector_to_json(spec.second);
      break;
    case DistributionKind::kStudentT:
      j["dim"] = spec.dim();
      j["dof"] = spec.dof;
      break;
    case DistributionKind::kUniformBox:
      j["lower"] = vector_to_json(spec.first);
      j["upper"] = vector_to_json(spec.second);
      break;
    case DistributionKind::kGammaProduct:
      j["shape"] = vector_to_json(spec.first);
      j["rate"] = vector_to_json(spec.second);
      j["log_space"] = spec.log_space;
      break;
  }
}

void from_json(const nlohmann::json& j, DistributionSpec& spec) {
  const auto kind = distribution_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case DistributionKind::kDiagonalGaussian:
      spec = DistributionSpec::gaussian(vector_from_json(j.at("mean")), vector_from_json(j.at("scale")));
      break;
    case DistributionKind::kStudentT:
      spec = DistributionSpec::student_t(j.at("dim").get<int>(), j.at("dof").get<double>());
      break;
    case DistributionKind::kUniformBox:
      spec = DistributionSpec::uniform_box(vector_from_json(j.at("lower")), vector_from_json(j.at("upper")));
      break;
    case DistributionKind::kGammaProduct:
      spec = DistributionSpec::gamma_product(vector_from_json(j.at("shape")), vector_from_json(j.at("rate")),
                                             j.value("log_space", false));
      break;
  }
}

double log_prob(const DistributionSpec& spec, const Eigen::Ref<const Vector>& x) {
  require(x.size() == spec.dim(), "log_prob: dimension mismatch (expected " +
                                      std::to_string(spec.dim()) + ", got " +
                                      std::to_string(x.size()) + ")");
  const int d = spec.dim();
  switch (spec.kind) {
    case DistributionKind::kDiagonalGaussian: {
      const auto z = ((x - spec.first).array() / spec.second.array()).matrix();
      return -0.5 * d * kLog2Pi - spec.second.array().log().sum() - 0.5 * z.squaredNorm();
    }
    case DistributionKind::kStudentT: {
      const double nu = spec.dof;
      return student_t_log_norm(d, nu) - 0.5 * (nu + d) * std::log1p(x.squaredNorm() / nu);
    }
    case DistributionKind::kUniformBox: {
      double lp = 0.0;
      for (int i = 0; i < d; ++i) {
        if (!(x(i) >= spec.first(i) && x(i) <= spec.second(i))) return kNegInf;
        lp -= std::log(spec.second(i) - spec.first(i));
      }
      return lp;
    }
    case DistributionKind::kGammaProduct: {
      double lp = 0.0;
      for (int i = 0; i < d; ++i) {
        const double a = spec.first(i);
        const double b = spec.second(i);
        if (spec.log_space) {
          const double u = x(i);
          if (!std::isfinite(u)) return kNegInf;
          // density of u = log(v): gamma(v) * v  =>  a*u - b*exp(u) + a*log(b) - lgamma(a)
          lp += a * std::log(b) - std::lgamma(a) + a * u - b * std::exp(u);
        } else {
          const double v = x(i);
          if (!(v > 0.0) || !std::isfinite(v)) return kNegInf;
          lp += a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(v) - b * v;
        }
      }
      return lp;
    }
  }
  return kNegInf;
}

Vector log_prob_rows(const DistributionSpec& spec, const Matrix& x) {
  require(x.cols() == spec.dim(), "log_prob_rows: dimension mismatch");
  Vector out(x.rows());
  for (Index r = 0; r < x.rows(); ++r) out(r) = log_prob(spec, x.row(r).transpose());
  return out;
}

Matrix sample(const DistributionSpec& spec, int n, Rng& rng) {
  require(n >= 1, "sample: n must be >= 1");
  const int d = spec.dim();
  Matrix out(n, d);
  for (int r = 0; r < n; ++r) {
    switch (spec.kind) {
      case DistributionKind::kDiagonalGaussian:
        for (int i = 0; i < d; ++i) out(r, i) = spec.first(i) + spec.second(i) * rng.normal();
        break;
      case DistributionKind::kStudentT: {
        for (int i = 0; i < d; ++i) out(r, i) = rng.normal();
        const double g = rng.chi_squared(spec.dof);
        out.row(r) *= std::sqrt(spec.dof / g);
        break;
      }
      case DistributionKind::kUniformBox:
        for (int i = 0; i < d; ++i) out(r, i) = rng.uniform(spec.first(i), spec.second(i));
        break;
      case DistributionKind::kGammaProduct:
        for (int i = 0; i < d; ++i) {
          const double v = rng.gamma(spec.first(i), spec.second(i));
          out(r, i) = spec.log_space ? std::log(v) : v;
        }
        break;
    }
  }
  return out;
}

Matrix log_prob_gradient_rows(const DistributionSpec& spec, const Matrix& x) {
  switch (spec.kind) {
    case DistributionKind::kDiagonalGaussian: {
      const RowVector inv_var = spec.second.array().square().inverse().matrix().transpose();
      Matrix g = -(x.rowwise() - spec.first.transpose());
      g.array().rowwise() *= inv_var.array();
      return g;
    }
    case DistributionKind::kStudentT: {
      const double nu = spec.dof;
      const int d = spec.dim();
      Matrix g = x;
      for (Index r = 0; r < x.rows(); ++r) {
        g.row(r) *= -(nu + d) / (nu + x.row(r).squaredNorm());
      }
      return g;
    }
    default:
      throw ContractError("log_prob_gradient_rows: only gaussian and student-t bases are differentiable");
  }
}

}  // namespace scabi
