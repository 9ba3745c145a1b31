// Reverse-mode autodiff over Tensor values. Eager graph of shared Nodes; every
// vjp is itself built out of these primitives, so the result of backward() is
// again a differentiable graph node — grad-of-grad falls out without any
// special second-order machinery (the mechanism the guidance loss needs).
//
// Gradient flow is pruned at construction: an op whose inputs all have
// requires_grad == false produces a constant node with no parents, so
// inference-only code pays value compute plus one allocation per op.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sami/tensor.hpp"

namespace sami {

struct Node;

struct Var {
  std::shared_ptr<Node> n;

  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : n(std::move(node)) {}
  bool defined() const { return static_cast<bool>(n); }
  const Tensor& val() const;
  const Shape& shape() const { return val().shape; }
  bool requires_grad() const;
};

// need[i] tells the closure whether parent i's gradient is actually consumed;
// closures skip dead parents (e.g. frozen weights) and leave the slot empty.
using VjpFn =
    std::function<std::vector<Var>(const Var& self, const Var& g, const std::vector<char>& need)>;

struct Node {
  Tensor value;
  const char* op = "";
  bool requires_grad = false;
  std::vector<Var> parents;
  VjpFn vjp;
};

Var constant(Tensor v);
Var leaf(Tensor v);  // differentiable graph input
Var detach(const Var& v);

// ----- primitives -----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);  // errors on zero denominator
Var matmul(const Var& a, const Var& b);
Var conv2d(const Var& x, const Var& w, int64_t stride, int64_t pad);
Var conv2d_input_grad(const Var& gy, const Var& w, int64_t stride, int64_t pad, Shape x_shape);
Var conv2d_weight_grad(const Var& x, const Var& gy, int64_t stride, int64_t pad, Shape w_shape);
Var transpose(const Var& x, std::vector<int64_t> perm = {});
Var reshape(const Var& x, Shape s);
Var sum(const Var& x);  // full reduction to rank-0
Var sum(const Var& x, std::vector<int64_t> axes, bool keepdims);
Var mean(const Var& x);
Var mean(const Var& x, std::vector<int64_t> axes, bool keepdims);
Var relu(const Var& x);
Var silu(const Var& x);  // x * sigmoid(x), composite
Var softplus(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);  // errors on non-positive input
Var square(const Var& x);
Var sqrt(const Var& x);  // errors on negative input
Var concat(const std::vector<Var>& xs, int64_t axis);
Var slice(const Var& x, Shape starts, Shape stops);
Var broadcast_to(const Var& x, Shape target);  // numpy-style right-aligned

// internal primitives backing the public set's vjps
Var sigmoid(const Var& x);
Var step0(const Var& x);  // 1 where x > 0 else 0 (0 at 0); derivative defined 0
Var pad_zero(const Var& x, Shape starts, Shape full);

// scalar-constant conveniences (primitive, no broadcast materialization)
Var cadd(const Var& x, double c);
Var cmul(const Var& x, double c);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// Thin dispatcher over the public elementwise/structural primitives, for
// property tests that compose random ops by id.
Var apply_primitive(const std::string& op, const std::vector<Var>& inputs);

// d(root)/d(wrt[i]) for a scalar root. Unreachable wrt nodes yield zero
// tensors (documented behavior, not an error). With create_graph the returned
// gradients stay differentiable; otherwise they are detached constants.
// Accumulation order is fixed by graph construction order.
std::vector<Var> backward(const Var& root, const std::vector<Var>& wrt, bool create_graph = false);

// Central differences vs backward() over every coordinate of x; returns
// max_i |ad - fd| / max(|ad|, |fd|, 1e-8). Errors on non-finite f values.
double finite_difference_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                               double eps);

}  // namespace sami
