#include "sbr/autodiff.hpp"

#include <string>
#include <utility>

namespace sbr {

namespace {

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "]";
}

void require_same_tape(const char* op, Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
  }
}

}  // namespace

Var Tape::constant(Matrix value) {
  return make_node(std::move(value), /*needs_grad=*/false, nullptr);
}

Var Tape::leaf(Matrix value) {
  return make_node(std::move(value), /*needs_grad=*/true, nullptr);
}

Var Tape::make_node(Matrix value, bool needs_grad, BackpropFn backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ContractError("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) {
    return;
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  const Node& l = node(loss);
  if (l.value.rows() != 1 || l.value.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(l.value));
  }
  if (swept_) {
    throw ContractError("backward: tape already swept");
  }
  swept_ = true;
  if (!l.needs_grad) {
    return;  // loss depends on no tracked leaf; all grads are zero
  }
  accumulate(loss.id, Matrix::Ones(1, 1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() != 0 && n.backprop) {
      n.backprop(*this, i);
    }
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!swept_) {
    throw ContractError("grad: backward() has not run");
  }
  if (n.grad.size() == 0) {
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

Var operator+(Var a, Var b) {
  require_same_tape("add", a, b);
  Tape& t = *a.tape;
  require_same_shape("add", t.value(a), t.value(b));
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  return t.make_node(t.value(a) + t.value(b), ng, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var operator-(Var a, Var b) {
  require_same_tape("sub", a, b);
  Tape& t = *a.tape;
  require_same_shape("sub", t.value(a), t.value(b));
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  return t.make_node(t.value(a) - t.value(b), ng, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, Matrix(-g));
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape("hadamard", a, b);
  Tape& t = *a.tape;
  require_same_shape("hadamard", t.value(a), t.value(b));
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  return t.make_node(t.value(a).cwiseProduct(t.value(b)), ng,
                     [a, b](Tape& tp, int self) {
                       const Matrix& g = tp.upstream(self);
                       tp.accumulate(a.id, g.cwiseProduct(tp.value(b)));
                       tp.accumulate(b.id, g.cwiseProduct(tp.value(a)));
                     });
}

Var scale(Var x, double c) {
  Tape& t = *x.tape;
  return t.make_node(c * t.value(x), t.wants_grad(x.id), [x, c](Tape& tp, int self) {
    tp.accumulate(x.id, Matrix(c * tp.upstream(self)));
  });
}

Var add_scalar(Var x, double c) {
  Tape& t = *x.tape;
  return t.make_node(t.value(x).array() + c, t.wants_grad(x.id),
                     [x](Tape& tp, int self) { tp.accumulate(x.id, tp.upstream(self)); });
}

Var linear(Var x, Var weight, Var bias) {
  require_same_tape("linear", x, weight);
  require_same_tape("linear", x, bias);
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(weight);
  const Matrix& bv = t.value(bias);
  if (xv.cols() != wv.cols()) {
    throw DimensionError("linear: input width " + std::to_string(xv.cols()) +
                         " does not match weight fan-in " + std::to_string(wv.cols()));
  }
  if (bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw DimensionError("linear: bias shape " + shape_str(bv) +
                         " does not match weight fan-out " + std::to_string(wv.rows()));
  }
  Matrix y = xv * wv.transpose();
  y.rowwise() += bv.row(0);
  const bool ng = t.wants_grad(x.id) || t.wants_grad(weight.id) || t.wants_grad(bias.id);
  return t.make_node(std::move(y), ng, [x, weight, bias](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(x.id, g * tp.value(weight));
    tp.accumulate(weight.id, g.transpose() * tp.value(x));
    tp.accumulate(bias.id, g.colwise().sum());
  });
}

Var activate(Var x, Activation act) {
  Tape& t = *x.tape;
  switch (act) {
    case Activation::Tanh:
      return t.make_node(t.value(x).array().tanh(), t.wants_grad(x.id),
                         [x](Tape& tp, int self) {
                           const Matrix& y = tp.value(Var{self, &tp});
                           const Matrix& g = tp.upstream(self);
                           tp.accumulate(x.id, (g.array() * (1.0 - y.array().square())).matrix());
                         });
    case Activation::Relu:
      return t.make_node(t.value(x).cwiseMax(0.0), t.wants_grad(x.id),
                         [x](Tape& tp, int self) {
                           const Matrix& g = tp.upstream(self);
                           const Matrix mask =
                               (tp.value(x).array() > 0.0).cast<double>().matrix();
                           tp.accumulate(x.id, g.cwiseProduct(mask));
                         });
  }
  throw ContractError("activate: unknown activation");
}

Var exp_elements(Var x) {
  Tape& t = *x.tape;
  return t.make_node(t.value(x).array().exp(), t.wants_grad(x.id),
                     [x](Tape& tp, int self) {
                       const Matrix& y = tp.value(Var{self, &tp});
                       tp.accumulate(x.id, tp.upstream(self).cwiseProduct(y));
                     });
}

Var square_elements(Var x) {
  Tape& t = *x.tape;
  return t.make_node(t.value(x).array().square(), t.wants_grad(x.id),
                     [x](Tape& tp, int self) {
                       const Matrix& g = tp.upstream(self);
                       tp.accumulate(x.id, (2.0 * g.array() * tp.value(x).array()).matrix());
                     });
}

Var sum_all(Var x) {
  Tape& t = *x.tape;
  Matrix s(1, 1);
  s(0, 0) = t.value(x).sum();
  return t.make_node(std::move(s), t.wants_grad(x.id), [x](Tape& tp, int self) {
    const double g = tp.upstream(self)(0, 0);
    const Matrix& xv = tp.value(x);
    tp.accumulate(x.id, Matrix::Constant(xv.rows(), xv.cols(), g));
  });
}

Var row_sums(Var x) {
  Tape& t = *x.tape;
  Matrix s = t.value(x).rowwise().sum();
  return t.make_node(std::move(s), t.wants_grad(x.id), [x](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);  // [n,1]
    tp.accumulate(x.id, g.replicate(1, tp.value(x).cols()));
  });
}

Var add_row_vector(Var x, Var row) {
  require_same_tape("add_row_vector", x, row);
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("add_row_vector: row shape " + shape_str(rv) +
                         " incompatible with " + shape_str(xv));
  }
  Matrix y = xv;
  y.rowwise() += rv.row(0);
  const bool ng = t.wants_grad(x.id) || t.wants_grad(row.id);
  return t.make_node(std::move(y), ng, [x, row](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(x.id, g);
    tp.accumulate(row.id, g.colwise().sum());
  });
}

Var mul_row_vector(Var x, Var row) {
  require_same_tape("mul_row_vector", x, row);
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("mul_row_vector: row shape " + shape_str(rv) +
                         " incompatible with " + shape_str(xv));
  }
  Matrix y = xv.array().rowwise() * rv.row(0).array();
  const bool ng = t.wants_grad(x.id) || t.wants_grad(row.id);
  return t.make_node(std::move(y), ng, [x, row](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(x.id, (g.array().rowwise() * tp.value(row).row(0).array()).matrix());
    tp.accumulate(row.id, g.cwiseProduct(tp.value(x)).colwise().sum());
  });
}

Var add_broadcast_scalar(Var x, Var scalar) {
  require_same_tape("add_broadcast_scalar", x, scalar);
  Tape& t = *x.tape;
  const Matrix& sv = t.value(scalar);
  if (sv.rows() != 1 || sv.cols() != 1) {
    throw DimensionError("add_broadcast_scalar: scalar operand has shape " + shape_str(sv));
  }
  Matrix y = t.value(x).array() + sv(0, 0);
  const bool ng = t.wants_grad(x.id) || t.wants_grad(scalar.id);
  return t.make_node(std::move(y), ng, [x, scalar](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(x.id, g);
    Matrix s(1, 1);
    s(0, 0) = g.sum();
    tp.accumulate(scalar.id, s);
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape("concat_cols", a, b);
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_str(av) + " vs " +
                         shape_str(bv));
  }
  Matrix y(av.rows(), av.cols() + bv.cols());
  y << av, bv;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  return t.make_node(std::move(y), ng, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    const Index ac = tp.value(a).cols();
    tp.accumulate(a.id, g.leftCols(ac));
    tp.accumulate(b.id, g.rightCols(g.cols() - ac));
  });
}

Var dot_with(Var x, const Vector& weights) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  if (xv.cols() != 1 || xv.rows() != weights.size()) {
    throw DimensionError("dot_with: expected column of length " +
                         std::to_string(weights.size()) + ", got " + shape_str(xv));
  }
  Matrix s(1, 1);
  s(0, 0) = (xv.col(0).array() * weights.array()).sum();
  return t.make_node(std::move(s), t.wants_grad(x.id), [x, weights](Tape& tp, int self) {
    const double g = tp.upstream(self)(0, 0);
    tp.accumulate(x.id, Matrix(g * weights));
  });
}

Var stop_gradient(Var x) {
  Tape& t = *x.tape;
  // needs_grad=false and no backprop: the reverse sweep never crosses it.
  return t.make_node(t.value(x), /*needs_grad=*/false, nullptr);
}

}  // namespace sbr
