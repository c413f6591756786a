#pragma once

#include "sbr/common.hpp"

#include <functional>
#include <vector>

namespace sbr {

enum class Activation { Tanh, Relu };

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  int id = -1;
  Tape* tape = nullptr;
};

// Reverse-mode tape over dense matrices. A tape records one computation,
// backward() runs a single reverse sweep, and the whole graph is freed with
// the tape (one tape per training batch).
class Tape {
 public:
  using BackpropFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Untracked input; never receives a gradient.
  Var constant(Matrix value);
  // Tracked leaf (a parameter); grad() is defined after backward().
  Var leaf(Matrix value);

  const Matrix& value(Var v) const;

  // Reverse sweep from a scalar (1x1) loss node. May be called once.
  void backward(Var loss);

  // Gradient of the loss w.r.t. a node; zeros if the loss never touched it.
  Matrix grad(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

  // --- used by the op free functions ---
  Var make_node(Matrix value, bool needs_grad, BackpropFn backprop);
  void accumulate(int id, const Matrix& g);
  const Matrix& upstream(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until first accumulation
    bool needs_grad = false;
    BackpropFn backprop;  // empty for leaves and constants
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool swept_ = false;
};

// Elementwise ops require identical shapes.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var hadamard(Var a, Var b);

Var scale(Var x, double c);
Var add_scalar(Var x, double c);

// y = x * W^T + b with x [n,in], W [out,in], b [1,out] broadcast over rows.
Var linear(Var x, Var weight, Var bias);

Var activate(Var x, Activation act);
Var exp_elements(Var x);
Var square_elements(Var x);

Var sum_all(Var x);   // 1x1
Var row_sums(Var x);  // [n,1]

Var add_row_vector(Var x, Var row);  // row [1,d] broadcast over rows of x
Var mul_row_vector(Var x, Var row);
Var add_broadcast_scalar(Var x, Var scalar);  // scalar node added to every entry

Var concat_cols(Var a, Var b);

// Fixed-weight reduction: sum_i w_i * x_i with x a column [n,1].
Var dot_with(Var x, const Vector& weights);

// Forward identity that contributes exactly zero to every upstream gradient.
Var stop_gradient(Var x);

}  // namespace sbr
