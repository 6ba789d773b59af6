#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "scabi/common.hpp"

// Reverse-mode automatic differentiation over dense matrices.
//
// Rows are batch items throughout. A Tape records one forward pass; calling
// backward() on a 1x1 node propagates gradients to every node and finally
// accumulates them into the Parameters that were bound with Tape::parameter.
namespace scabi::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Weight matrices are subject to L2 regularization and weight clipping;
  // biases are not.
  bool is_weight = false;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool weight)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())),
        is_weight(weight) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

Index parameter_count(const ParameterList& params);
Vector flatten_values(const ParameterList& params);
Vector flatten_grads(const ParameterList& params);
void assign_values(const ParameterList& params, const Vector& flat);
void zero_grads(const ParameterList& params);

class Tape;

class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  // With gradients disabled nodes keep only their values; used for sampling
  // and evaluation.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  Var parameter(Parameter& p);
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

  // Adds g into the gradient slot of v (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. Parameter gradients
  // are added to Parameter::grad (not overwritten).
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Elementwise and linear algebra ops. All shapes are checked.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var a, Var row);                  // a + broadcast 1 x c row
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var silu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp_min(Var a, double lo, long* clamped = nullptr);

Var sum_rows(Var a);                          // n x c -> n x 1
Var sum(Var a);                               // -> 1 x 1
Var mean(Var a);                              // -> 1 x 1

Var concat_cols(std::span<const Var> parts);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Index start, Index count);
Var gather_cols(Var a, const std::vector<int>& index);
Var repeat_rows(Var a, Index times);          // row i -> rows [i*times, (i+1)*times)

// Mean over consecutive groups of `group` rows. The per-column sum runs over
// the sorted group values, so the result is bitwise invariant to the order of
// rows within a group.
Var segment_mean(Var a, Index group);

// Unbiased (K-1) variance of an n x 1 column over consecutive groups of
// `group` rows. Rows with include[r] == false are ignored. Groups with fewer
// than two included rows yield 0; their count is written to `degenerate`.
Var segment_variance(Var a, Index group, const std::vector<bool>& include,
                     long* degenerate = nullptr);

// Scaled dot-product attention within consecutive groups of `group` rows:
// for each group, softmax(Q K^T / sqrt(c)) V.
Var set_attention(Var q, Var k, Var v, Index group);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, double s);

}  // namespace scabi::ad
