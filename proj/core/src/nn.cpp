#include "scabi/nn.hpp"

#include <cmath>

namespace scabi::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
    case Activation::kSilu: return "silu";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "tanh") return Activation::kTanh;
  if (name == "silu" || name == "swish") return Activation::kSilu;
  throw ConfigError("unknown activation '" + name + "'");
}

ad::Var activate(ad::Var x, Activation a) {
  switch (a) {
    case Activation::kLinear: return x;
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kSilu: return ad::silu(x);
  }
  return x;
}

Dense::Dense(int in, int out, Rng& rng, const std::string& name) {
  require(in >= 0 && out >= 1, "Dense: invalid layer size");
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max(1, in + out)));
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  weight_ = ad::Parameter(name + ".weight", std::move(w), true);
  bias_ = ad::Parameter(name + ".bias", Matrix::Zero(1, out), false);
}

ad::Var Dense::forward(ad::Var x) const {
  ad::Tape& tape = *x.tape();
  const ad::Var w = tape.parameter(weight_);
  const ad::Var b = tape.parameter(bias_);
  return ad::add_row(ad::matmul(x, w), b);
}

Mlp::Mlp(int in, const std::vector<int>& hidden, int out, Activation activation, Rng& rng,
         const std::string& name)
    : activation_(activation) {
  int width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(width, hidden[i], rng, name + ".dense" + std::to_string(i));
    width = hidden[i];
  }
  layers_.emplace_back(width, out, rng, name + ".dense" + std::to_string(hidden.size()));
}

ad::Var Mlp::forward(ad::Var x) const {
  require(x.cols() == in_features(), "Mlp: input width mismatch");
  ad::Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = activate(h, activation_);
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& x) const {
  ad::Tape tape(false);
  return forward(tape.constant(x)).value();
}

void Mlp::zero_output_layer() {
  layers_.back().weight().value.setZero();
  layers_.back().bias().value.setZero();
}

void Mlp::collect_parameters(ad::ParameterList& out) {
  for (auto& layer : layers_) layer.collect_parameters(out);
}

}  // namespace scabi::nn
