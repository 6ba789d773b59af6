#include "scabi/optimizer.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace scabi::optim {

void OptimizerSpec::validate() const {
  require(learning_rate > 0.0, "optimizer: learning_rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "optimizer: betas must be in [0, 1)");
  require(epsilon > 0.0, "optimizer: epsilon must be positive");
  require(weight_decay >= 0.0 && clipnorm >= 0.0 && weight_clip >= 0.0,
          "optimizer: weight_decay, clipnorm and weight_clip must be >= 0");
}

void to_json(nlohmann::json& j, const OptimizerSpec& s) {
  j = nlohmann::json{{"kind", s.kind == OptimizerSpec::Kind::kAdam ? "adam" : "sgd"},
                     {"learning_rate", s.learning_rate},
                     {"beta1", s.beta1},
                     {"beta2", s.beta2},
                     {"epsilon", s.epsilon},
                     {"weight_decay", s.weight_decay},
                     {"clipnorm", s.clipnorm},
                     {"cosine_decay", s.cosine_decay},
                     {"weight_clip", s.weight_clip}};
}

void from_json(const nlohmann::json& j, OptimizerSpec& s) {
  s = OptimizerSpec{};
  const std::string kind = j.value("kind", std::string("adam"));
  if (kind == "adam") {
    s.kind = OptimizerSpec::Kind::kAdam;
  } else if (kind == "sgd") {
    s.kind = OptimizerSpec::Kind::kSgd;
  } else {
    throw ConfigError("unknown optimizer '" + kind + "'");
  }
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.beta1 = j.value("beta1", s.beta1);
  s.beta2 = j.value("beta2", s.beta2);
  s.epsilon = j.value("epsilon", s.epsilon);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.clipnorm = j.value("clipnorm", s.clipnorm);
  s.cosine_decay = j.value("cosine_decay", s.cosine_decay);
  s.weight_clip = j.value("weight_clip", s.weight_clip);
  s.validate();
}

Optimizer::Optimizer(OptimizerSpec spec, ad::ParameterList params) : spec_(spec), params_(std::move(params)) {
  spec_.validate();
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

double Optimizer::learning_rate(long step, long total_steps) const {
  if (!spec_.cosine_decay || total_steps <= 0) return spec_.learning_rate;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return spec_.learning_rate * 0.5 * (1.0 + std::cos(kPi * t));
}

double Optimizer::step(long total_steps) {
  std::vector<Matrix> grads;
  grads.reserve(params_.size());
  double sq = 0.0;
  for (const auto* p : params_) {
    Matrix g = p->grad;
    if (spec_.weight_decay > 0.0 && p->is_weight) g += spec_.weight_decay * p->value;
    sq += g.squaredNorm();
    grads.push_back(std::move(g));
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("optimizer: non-finite gradient");
  const double factor = (spec_.clipnorm > 0.0 && norm > spec_.clipnorm) ? spec_.clipnorm / norm : 1.0;
  const double lr = learning_rate(t_, total_steps);
  ++t_;
  const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    const Matrix g = grads[i] * factor;
    if (spec_.kind == OptimizerSpec::Kind::kSgd) {
      p.value -= lr * g;
    } else {
      m_[i] = spec_.beta1 * m_[i] + (1.0 - spec_.beta1) * g;
      v_[i] = spec_.beta2 * v_[i] + (1.0 - spec_.beta2) * g.cwiseProduct(g);
      const Matrix mhat = m_[i] / bc1;
      const Matrix vhat = v_[i] / bc2;
      p.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + spec_.epsilon);
    }
    if (spec_.weight_clip > 0.0 && p.is_weight) {
      p.value = p.value.cwiseMax(-spec_.weight_clip).cwiseMin(spec_.weight_clip);
    }
  }
  return norm;
}

Vector Optimizer::state() const {
  Index size = 1;
  for (const auto& m : m_) size += 2 * m.size();
  Vector out(size);
  out(0) = static_cast<double>(t_);
  Index pos = 1;
  for (const auto* moments : {&m_, &v_}) {
    for (const auto& m : *moments) {
      out.segment(pos, m.size()) = m.reshaped();
      pos += m.size();
    }
  }
  return out;
}

void Optimizer::set_state(const Vector& state) {
  if (state.size() != this->state().size()) throw CheckpointError("optimizer state size mismatch");
  t_ = static_cast<long>(state(0));
  Index pos = 1;
  for (auto* moments : {&m_, &v_}) {
    for (auto& m : *moments) {
      m.reshaped() = state.segment(pos, m.size());
      pos += m.size();
    }
  }
}

}  // namespace scabi::optim
