#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scabi/autodiff.hpp"
#include "scabi/rng.hpp"

namespace scabi::nn {

enum class Activation { kLinear, kTanh, kSilu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

ad::Var activate(ad::Var x, Activation a);

class Dense {
 public:
  Dense() = default;
  // Glorot-uniform weights, zero bias.
  Dense(int in, int out, Rng& rng, const std::string& name);

  ad::Var forward(ad::Var x) const;
  int in_features() const { return static_cast<int>(weight_.value.rows()); }
  int out_features() const { return static_cast<int>(weight_.value.cols()); }

  ad::Parameter& weight() { return weight_; }
  ad::Parameter& bias() { return bias_; }
  const ad::Parameter& weight() const { return weight_; }
  const ad::Parameter& bias() const { return bias_; }

  void collect_parameters(ad::ParameterList& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  // Parameters are bound to a tape through a mutable pointer; the forward pass
  // itself never modifies them.
  mutable ad::Parameter weight_;
  mutable ad::Parameter bias_;
};

// Fully connected network; the activation is applied after every layer except
// the last, which stays linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in, const std::vector<int>& hidden, int out, Activation activation, Rng& rng,
      const std::string& name);

  ad::Var forward(ad::Var x) const;
  Matrix evaluate(const Matrix& x) const;

  int in_features() const { return layers_.front().in_features(); }
  int out_features() const { return layers_.back().out_features(); }
  std::size_t depth() const { return layers_.size(); }
  Dense& layer(std::size_t i) { return layers_[i]; }
  const Dense& layer(std::size_t i) const { return layers_[i]; }

  // Zeroes the final layer so the network outputs exactly 0.
  void zero_output_layer();
  void collect_parameters(ad::ParameterList& out);

 private:
  std::vector<Dense> layers_;
  Activation activation_ = Activation::kSilu;
};

}  // namespace scabi::nn
