#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scabi/autodiff.hpp"

namespace scabi::optim {

struct OptimizerSpec {
  enum class Kind { kAdam, kSgd };

  Kind kind = Kind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // L2 penalty gamma/2 * ||W||^2 on weight matrices, added to the gradient.
  double weight_decay = 0.0;
  // Rescale the global gradient norm to at most this value; 0 disables.
  double clipnorm = 1.0;
  // Cosine decay of the learning rate to 0 over the whole run.
  bool cosine_decay = false;
  // Project weight entries into [-c, c] after each step; 0 disables.
  double weight_clip = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimizerSpec& s);
void from_json(const nlohmann::json& j, OptimizerSpec& s);

class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, ad::ParameterList params);

  // Learning rate at a step for a run of `total_steps` steps.
  double learning_rate(long step, long total_steps) const;
  // Applies one update from the gradients currently stored in the
  // parameters. Returns the global gradient norm before clipping (including
  // the L2 term).
  double step(long total_steps);

  long steps_taken() const { return t_; }

  // Step count followed by the first and second moments, flattened. Restoring
  // a saved state continues a run bit-exactly.
  Vector state() const;
  void set_state(const Vector& state);
  const OptimizerSpec& spec() const { return spec_; }

 private:
  OptimizerSpec spec_;
  ad::ParameterList params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace scabi::optim
