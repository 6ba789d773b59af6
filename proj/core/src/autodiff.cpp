#include "scabi/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace scabi::ad {

Index parameter_count(const ParameterList& params) {
  Index n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

Vector flatten_values(const ParameterList& params) {
  Vector flat(parameter_count(params));
  Index offset = 0;
  for (const auto* p : params) {
    flat.segment(offset, p->value.size()) = p->value.reshaped();
    offset += p->value.size();
  }
  return flat;
}

Vector flatten_grads(const ParameterList& params) {
  Vector flat(parameter_count(params));
  Index offset = 0;
  for (const auto* p : params) {
    if (p->grad.size() == p->value.size()) {
      flat.segment(offset, p->value.size()) = p->grad.reshaped();
    } else {
      flat.segment(offset, p->value.size()).setZero();
    }
    offset += p->value.size();
  }
  return flat;
}

void assign_values(const ParameterList& params, const Vector& flat) {
  require(flat.size() == parameter_count(params), "assign_values: size mismatch");
  Index offset = 0;
  for (auto* p : params) {
    p->value.reshaped() = flat.segment(offset, p->value.size());
    offset += p->value.size();
  }
}

void zero_grads(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, grad_enabled_, false, {}, grad_enabled_ ? &p : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      require(in.tape() == this, "autodiff: input belongs to a different tape");
      needs = needs || requires_grad(in);
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{},
                        nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var loss) {
  require(grad_enabled_, "backward: tape was recorded without gradients");
  require(loss.tape() == this, "backward: loss belongs to a different tape");
  require(value(loss).size() == 1, "backward: loss must be a scalar");
  if (!requires_grad(loss)) return;
  accumulate(loss, Matrix::Ones(1, 1));
  for (int i = loss.id(); i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      if (node.param->grad.size() != node.param->value.size()) node.param->zero_grad();
      node.param->grad += node.grad;
    }
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
              std::to_string(b.cols()) + ")");
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner dimension mismatch");
  Matrix out = av * bv;
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var scale(Var a, double factor) {
  return a.tape()->record(a.value() * factor, {a},
                          [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row: row shape mismatch");
  Matrix out = av.rowwise() + rv.row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var add_scalar(Var a, double c) {
  return a.tape()->record(a.value().array() + c, {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh();
  Matrix deriv = 1.0 - out.array().square();
  return a.tape()->record(std::move(out), {a}, [a, deriv = std::move(deriv)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(deriv));
  });
}

Var silu(Var a) {
  const Matrix& x = a.value();
  const Matrix sig = (1.0 + (-x.array()).exp()).inverse();
  Matrix out = x.cwiseProduct(sig);
  Matrix deriv = (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix();
  return a.tape()->record(std::move(out), {a}, [a, deriv = std::move(deriv)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(deriv));
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp();
  return a.tape()->record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(out));
  });
}

Var log(Var a) {
  Matrix out = a.value().array().log();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(t.value(a)));
  });
}

Var square(Var a) {
  Matrix out = a.value().array().square();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(t.value(a)));
  });
}

Var clamp_min(Var a, double lo, long* clamped) {
  const Matrix& x = a.value();
  Matrix out = x;
  Matrix mask = Matrix::Ones(x.rows(), x.cols());
  long count = 0;
  for (Index i = 0; i < x.size(); ++i) {
    if (!(x.data()[i] >= lo)) {
      out.data()[i] = lo;
      mask.data()[i] = 0.0;
      ++count;
    }
  }
  if (clamped != nullptr) *clamped += count;
  return a.tape()->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

Var sum_rows(Var a) {
  Matrix out = a.value().rowwise().sum();
  const Index cols = a.cols();
  return a.tape()->record(std::move(out), {a}, [a, cols](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(1, cols));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape()->record(std::move(out), {a}, [a, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offsets.push_back(offset);
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape()->record(
      std::move(out), parts, [inputs, offsets](Tape& t, const Matrix& g) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (t.requires_grad(inputs[i])) {
            t.accumulate(inputs[i], g.middleCols(offsets[i], t.value(inputs[i]).cols()));
          }
        }
      });
}

Var concat_cols(Var a, Var b) {
  const Var parts[2] = {a, b};
  return concat_cols(std::span<const Var>(parts, 2));
}

Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape()->record(std::move(out), {a}, [a, start, count, r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

Var gather_cols(Var a, const std::vector<int>& index) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), static_cast<Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    require(index[j] >= 0 && index[j] < x.cols(), "gather_cols: index out of range");
    out.col(static_cast<Index>(j)) = x.col(index[j]);
  }
  const Index r = x.rows();
  const Index c = x.cols();
  return a.tape()->record(std::move(out), {a}, [a, index, r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (std::size_t j = 0; j < index.size(); ++j) full.col(index[j]) += g.col(static_cast<Index>(j));
    t.accumulate(a, full);
  });
}

Var repeat_rows(Var a, Index times) {
  require(times >= 1, "repeat_rows: times must be >= 1");
  const Matrix& x = a.value();
  Matrix out(x.rows() * times, x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    out.middleRows(i * times, times) = x.row(i).replicate(times, 1);
  }
  const Index r = x.rows();
  return a.tape()->record(std::move(out), {a}, [a, times, r](Tape& t, const Matrix& g) {
    Matrix back(r, g.cols());
    for (Index i = 0; i < r; ++i) back.row(i) = g.middleRows(i * times, times).colwise().sum();
    t.accumulate(a, back);
  });
}

Var segment_mean(Var a, Index group) {
  const Matrix& x = a.value();
  require(group >= 1 && x.rows() % group == 0, "segment_mean: rows not divisible by group size");
  const Index segments = x.rows() / group;
  Matrix out(segments, x.cols());
  std::vector<double> buffer(static_cast<std::size_t>(group));
  for (Index s = 0; s < segments; ++s) {
    for (Index c = 0; c < x.cols(); ++c) {
      for (Index k = 0; k < group; ++k) buffer[static_cast<std::size_t>(k)] = x(s * group + k, c);
      std::sort(buffer.begin(), buffer.end());
      double total = 0.0;
      for (double v : buffer) total += v;
      out(s, c) = total / static_cast<double>(group);
    }
  }
  return a.tape()->record(std::move(out), {a}, [a, group, segments](Tape& t, const Matrix& g) {
    Matrix back(segments * group, g.cols());
    const double inv = 1.0 / static_cast<double>(group);
    for (Index s = 0; s < segments; ++s) {
      back.middleRows(s * group, group) = (g.row(s) * inv).replicate(group, 1);
    }
    t.accumulate(a, back);
  });
}

Var segment_variance(Var a, Index group, const std::vector<bool>& include, long* degenerate) {
  const Matrix& x = a.value();
  require(x.cols() == 1, "segment_variance: expected a column");
  require(group >= 1 && x.rows() % group == 0, "segment_variance: rows not divisible by group size");
  require(static_cast<Index>(include.size()) == x.rows(), "segment_variance: mask size mismatch");
  const Index segments = x.rows() / group;
  Matrix out = Matrix::Zero(segments, 1);
  // d var / d x_k = 2 (x_k - mean) / (n - 1) for included rows.
  Matrix deriv = Matrix::Zero(x.rows(), 1);
  long bad = 0;
  for (Index s = 0; s < segments; ++s) {
    double total = 0.0;
    Index n = 0;
    for (Index k = 0; k < group; ++k) {
      const Index r = s * group + k;
      if (include[static_cast<std::size_t>(r)]) {
        total += x(r, 0);
        ++n;
      }
    }
    if (n < 2) {
      ++bad;
      continue;
    }
    const double m = total / static_cast<double>(n);
    double ss = 0.0;
    for (Index k = 0; k < group; ++k) {
      const Index r = s * group + k;
      if (include[static_cast<std::size_t>(r)]) {
        const double dev = x(r, 0) - m;
        ss += dev * dev;
        deriv(r, 0) = 2.0 * dev / static_cast<double>(n - 1);
      }
    }
    out(s, 0) = ss / static_cast<double>(n - 1);
  }
  if (degenerate != nullptr) *degenerate += bad;
  return a.tape()->record(std::move(out), {a}, [a, group, segments, deriv = std::move(deriv)](
                                                   Tape& t, const Matrix& g) {
    Matrix back(segments * group, 1);
    for (Index s = 0; s < segments; ++s) {
      back.middleRows(s * group, group) = deriv.middleRows(s * group, group) * g(s, 0);
    }
    t.accumulate(a, back);
  });
}

Var set_attention(Var q, Var k, Var v, Index group) {
  require(group >= 1 && q.rows() % group == 0, "set_attention: rows must be a multiple of group");
  require(k.rows() == q.rows() && v.rows() == q.rows() && k.cols() == q.cols(),
          "set_attention: shape mismatch");
  const Index groups = q.rows() / group;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  std::vector<Matrix> weights(static_cast<std::size_t>(groups));
  Matrix out(q.rows(), v.cols());
  for (Index g = 0; g < groups; ++g) {
    Matrix s = q.value().middleRows(g * group, group) * k.value().middleRows(g * group, group).transpose() * inv_sqrt;
    for (Index i = 0; i < group; ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp().matrix();
      s.row(i) /= s.row(i).sum();
    }
    out.middleRows(g * group, group) = s * v.value().middleRows(g * group, group);
    weights[static_cast<std::size_t>(g)] = std::move(s);
  }
  return q.tape()->record(std::move(out), {q, k, v},
                          [q, k, v, group, groups, inv_sqrt, weights](Tape& t, const Matrix& g) {
    Matrix gq = Matrix::Zero(t.value(q).rows(), t.value(q).cols());
    Matrix gk = Matrix::Zero(gq.rows(), gq.cols());
    Matrix gv = Matrix::Zero(t.value(v).rows(), t.value(v).cols());
    for (Index b = 0; b < groups; ++b) {
      const Matrix& a = weights[static_cast<std::size_t>(b)];
      const auto go = g.middleRows(b * group, group);
      const auto vb = t.value(v).middleRows(b * group, group);
      gv.middleRows(b * group, group) = a.transpose() * go;
      const Matrix ga = go * vb.transpose();
      Matrix gs = a.array() * (ga.colwise() - (ga.array() * a.array()).rowwise().sum().matrix()).array();
      gs *= inv_sqrt;
      gq.middleRows(b * group, group) = gs * t.value(k).middleRows(b * group, group);
      gk.middleRows(b * group, group) = gs.transpose() * t.value(q).middleRows(b * group, group);
    }
    t.accumulate(q, gq);
    t.accumulate(k, gk);
    t.accumulate(v, gv);
  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, double s) { return scale(a, s); }

}  // namespace scabi::ad
