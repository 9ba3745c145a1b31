#include "sami/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "sami/kernels.hpp"

namespace sami {

const Tensor& Var::val() const {
  if (!n) throw std::runtime_error("Var: undefined");
  return n->value;
}

bool Var::requires_grad() const { return n && n->requires_grad; }

namespace {

Var wrap(Tensor v, bool rg) {
  auto node = std::make_shared<Node>();
  node->value = std::move(v);
  node->op = rg ? "leaf" : "const";
  node->requires_grad = rg;
  return Var(std::move(node));
}

// Parents/vjp are dropped when no input needs gradients: inference-only code
// builds constant nodes and the graph never grows behind it.
Var make_op(const char* op, Tensor value, std::vector<Var> parents, VjpFn vjp) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  for (const Var& p : parents)
    if (p.defined() && p.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->vjp = std::move(vjp);
  }
  return Var(std::move(node));
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.val().shape != b.val().shape)
    shape_error(op, "shape mismatch " + shape_str(a.val().shape) + " vs " + shape_str(b.val().shape));
}

Tensor map_unary(const Tensor& x, double (*f)(double)) {
  Tensor r = x;
  for (double& v : r.data) v = f(v);
  return r;
}

// ----- strided copy machinery for broadcast / transpose / slice -----

// dst is contiguous row-major over dims; src is addressed by istr (entries may
// be 0 for broadcast dims).
void strided_gather(const double* src, double* dst, const Shape& dims,
                    const std::vector<int64_t>& istr, int d) {
  const int rank = static_cast<int>(dims.size());
  if (rank == 0) {
    *dst = *src;
    return;
  }
  if (d == rank - 1) {
    const int64_t n = dims[d], s = istr[d];
    if (s == 1) {
      std::memcpy(dst, src, n * sizeof(double));
    } else if (s == 0) {
      std::fill_n(dst, n, *src);
    } else {
      for (int64_t j = 0; j < n; ++j) dst[j] = src[j * s];
    }
    return;
  }
  int64_t block = 1;
  for (int dd = d + 1; dd < rank; ++dd) block *= dims[dd];
  for (int64_t j = 0; j < dims[d]; ++j)
    strided_gather(src + j * istr[d], dst + j * block, dims, istr, d + 1);
}

std::vector<int64_t> broadcast_in_strides(const Shape& from, const Shape& to, const char* op) {
  if (from.size() > to.size())
    shape_error(op, "cannot broadcast " + shape_str(from) + " to lower-rank " + shape_str(to));
  const size_t off = to.size() - from.size();
  const Shape fstr = strides_of(from);
  std::vector<int64_t> istr(to.size(), 0);
  for (size_t i = 0; i < from.size(); ++i) {
    if (from[i] == to[off + i])
      istr[off + i] = fstr[i];
    else if (from[i] == 1)
      istr[off + i] = 0;
    else
      shape_error(op, "cannot broadcast " + shape_str(from) + " to " + shape_str(to));
  }
  return istr;
}

}  // namespace

Var constant(Tensor v) { return wrap(std::move(v), false); }
Var leaf(Tensor v) { return wrap(std::move(v), true); }
Var detach(const Var& v) { return constant(v.val()); }

// ----- elementwise -----

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  return make_op("add", t_add(a.val(), b.val()), {a, b},
                 [](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = g;
                   if (need[1]) r[1] = g;
                   return r;
                 });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  return make_op("sub", t_sub(a.val(), b.val()), {a, b},
                 [](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = g;
                   if (need[1]) r[1] = cmul(g, -1.0);
                   return r;
                 });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape("mul", a, b);
  return make_op("mul", t_mul(a.val(), b.val()), {a, b},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = mul(g, self.n->parents[1]);
                   if (need[1]) r[1] = mul(g, self.n->parents[0]);
                   return r;
                 });
}

Var div(const Var& a, const Var& b) {
  check_same_shape("div", a, b);
  Tensor v = a.val();
  for (int64_t i = 0; i < v.numel(); ++i) {
    if (b.val().data[i] == 0.0) throw std::runtime_error("div: division by zero");
    v.data[i] /= b.val().data[i];
  }
  return make_op("div", std::move(v), {a, b},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   const Var& b = self.n->parents[1];
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = div(g, b);
                   if (need[1]) r[1] = cmul(mul(g, div(self, b)), -1.0);  // -g*a/b^2
                   return r;
                 });
}

Var cadd(const Var& x, double c) {
  Tensor v = x.val();
  for (double& e : v.data) e += c;
  return make_op("cadd", std::move(v), {x},
                 [](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = g;
                   return r;
                 });
}

Var cmul(const Var& x, double c) {
  return make_op("cmul", t_scale(x.val(), c), {x},
                 [c](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = cmul(g, c);
                   return r;
                 });
}

// ----- unary nonlinearities -----

Var relu(const Var& x) {
  return make_op("relu", map_unary(x.val(), [](double v) { return v > 0 ? v : 0.0; }), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = mul(g, step0(self.n->parents[0]));
                   return r;
                 });
}

Var step0(const Var& x) {
  return make_op("step0", map_unary(x.val(), [](double v) { return v > 0 ? 1.0 : 0.0; }), {x},
                 [](const Var& self, const Var&, const std::vector<char>& need) {
                   // Derivative fixed to 0 everywhere (relu subgradient convention).
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = constant(Tensor::zeros(self.n->parents[0].shape()));
                   return r;
                 });
}

Var sigmoid(const Var& x) {
  Tensor v = map_unary(x.val(), [](double t) {
    return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  });
  return make_op("sigmoid", std::move(v), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = mul(g, mul(self, cadd(cmul(self, -1.0), 1.0)));
                   return r;
                 });
}

Var silu(const Var& x) { return mul(x, sigmoid(x)); }

Var softplus(const Var& x) {
  Tensor v = map_unary(x.val(), [](double t) {
    return std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t)));
  });
  return make_op("softplus", std::move(v), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = mul(g, sigmoid(self.n->parents[0]));
                   return r;
                 });
}

Var exp(const Var& x) {
  return make_op("exp", map_unary(x.val(), [](double v) { return std::exp(v); }), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = mul(g, self);
                   return r;
                 });
}

Var log(const Var& x) {
  for (double v : x.val().data)
    if (v <= 0.0) throw std::runtime_error("log: non-positive input");
  return make_op("log", map_unary(x.val(), [](double v) { return std::log(v); }), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = div(g, self.n->parents[0]);
                   return r;
                 });
}

Var square(const Var& x) {
  return make_op("square", map_unary(x.val(), [](double v) { return v * v; }), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = mul(g, cmul(self.n->parents[0], 2.0));
                   return r;
                 });
}

Var sqrt(const Var& x) {
  for (double v : x.val().data)
    if (v < 0.0) throw std::runtime_error("sqrt: negative input");
  return make_op("sqrt", map_unary(x.val(), [](double v) { return std::sqrt(v); }), {x},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   // d/dx sqrt = 1/(2 sqrt); errors at exactly 0 via div's zero check
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = div(g, cmul(self, 2.0));
                   return r;
                 });
}

// ----- linear algebra / conv -----

Var matmul(const Var& a, const Var& b) {
  return make_op("matmul", kernels::matmul(a.val(), b.val()), {a, b},
                 [](const Var& self, const Var& g, const std::vector<char>& need) {
                   const Var& a = self.n->parents[0];
                   const Var& b = self.n->parents[1];
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = matmul(g, transpose(b));
                   if (need[1]) r[1] = matmul(transpose(a), g);
                   return r;
                 });
}

Var conv2d(const Var& x, const Var& w, int64_t stride, int64_t pad) {
  Tensor v = kernels::conv2d_forward(x.val(), w.val(), stride, pad);
  return make_op("conv2d", std::move(v), {x, w},
                 [stride, pad](const Var& self, const Var& g, const std::vector<char>& need) {
                   const Var& x = self.n->parents[0];
                   const Var& w = self.n->parents[1];
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = conv2d_input_grad(g, w, stride, pad, x.shape());
                   if (need[1]) r[1] = conv2d_weight_grad(x, g, stride, pad, w.shape());
                   return r;
                 });
}

// Forward op in its own right (transposed convolution / upsampling); together
// with conv2d and conv2d_weight_grad it forms a derivative-closed family.
Var conv2d_input_grad(const Var& gy, const Var& w, int64_t stride, int64_t pad, Shape x_shape) {
  Tensor v = kernels::conv2d_input_grad(gy.val(), w.val(), stride, pad, x_shape);
  return make_op("conv2d_input_grad", std::move(v), {gy, w},
                 [stride, pad](const Var& self, const Var& g, const std::vector<char>& need) {
                   const Var& gy = self.n->parents[0];
                   const Var& w = self.n->parents[1];
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = conv2d(g, w, stride, pad);
                   if (need[1]) r[1] = conv2d_weight_grad(g, gy, stride, pad, w.shape());
                   return r;
                 });
}

Var conv2d_weight_grad(const Var& x, const Var& gy, int64_t stride, int64_t pad, Shape w_shape) {
  Tensor v = kernels::conv2d_weight_grad(x.val(), gy.val(), stride, pad, w_shape);
  return make_op("conv2d_weight_grad", std::move(v), {x, gy},
                 [stride, pad](const Var& self, const Var& g, const std::vector<char>& need) {
                   const Var& x = self.n->parents[0];
                   const Var& gy = self.n->parents[1];
                   std::vector<Var> r(2);
                   if (need[0]) r[0] = conv2d_input_grad(gy, g, stride, pad, x.shape());
                   if (need[1]) r[1] = conv2d(x, g, stride, pad);
                   return r;
                 });
}

// ----- structural -----

Var transpose(const Var& x, std::vector<int64_t> perm) {
  const Shape& xs = x.val().shape;
  const int64_t rank = static_cast<int64_t>(xs.size());
  if (perm.empty()) {
    perm.resize(rank);
    for (int64_t i = 0; i < rank; ++i) perm[i] = rank - 1 - i;
  }
  if (static_cast<int64_t>(perm.size()) != rank)
    shape_error("transpose", "perm rank mismatch for " + shape_str(xs));
  std::vector<char> seen(rank, 0);
  for (int64_t p : perm) {
    if (p < 0 || p >= rank || seen[p]) shape_error("transpose", "invalid permutation");
    seen[p] = 1;
  }
  Shape os(rank);
  const Shape xstr = strides_of(xs);
  std::vector<int64_t> istr(rank);
  for (int64_t i = 0; i < rank; ++i) {
    os[i] = xs[perm[i]];
    istr[i] = xstr[perm[i]];
  }
  Tensor out = Tensor::zeros(os);
  strided_gather(x.val().data.data(), out.data.data(), os, istr, 0);
  // inverse permutation for the vjp
  std::vector<int64_t> inv(rank);
  for (int64_t i = 0; i < rank; ++i) inv[perm[i]] = i;
  return make_op("transpose", std::move(out), {x},
                 [inv](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = transpose(g, inv);
                   return r;
                 });
}

Var reshape(const Var& x, Shape s) {
  if (shape_numel(s) != x.val().numel())
    shape_error("reshape", shape_str(x.val().shape) + " to " + shape_str(s) + " changes element count");
  Tensor v(s, x.val().data);
  Shape old = x.val().shape;
  return make_op("reshape", std::move(v), {x},
                 [old](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = reshape(g, old);
                   return r;
                 });
}

Var sum(const Var& x) {
  Shape old = x.val().shape;
  return make_op("sum", Tensor::scalar_of(t_sum(x.val())), {x},
                 [old](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = broadcast_to(g, old);
                   return r;
                 });
}

Var sum(const Var& x, std::vector<int64_t> axes, bool keepdims) {
  const Shape& xs = x.val().shape;
  const int64_t rank = static_cast<int64_t>(xs.size());
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<char> reduced(rank, 0);
  for (int64_t a : axes) {
    if (a < 0 || a >= rank) shape_error("sum", "axis out of range for " + shape_str(xs));
    reduced[a] = 1;
  }
  Shape kshape(rank);  // keepdims shape
  Shape oshape;
  for (int64_t i = 0; i < rank; ++i) {
    kshape[i] = reduced[i] ? 1 : xs[i];
    if (!reduced[i]) oshape.push_back(xs[i]);
  }
  Tensor acc = Tensor::zeros(kshape);
  // odometer walk in x's row-major order: fixed accumulation order.
  const Shape ostr_full = strides_of(kshape);
  std::vector<int64_t> map_str(rank);
  for (int64_t i = 0; i < rank; ++i) map_str[i] = reduced[i] ? 0 : ostr_full[i];
  std::vector<int64_t> idx(rank, 0);
  int64_t ooff = 0;
  const double* src = x.val().data.data();
  const int64_t n = x.val().numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    acc.data[ooff] += src[flat];
    for (int64_t d = rank - 1; d >= 0; --d) {
      ooff += map_str[d];
      if (++idx[d] < xs[d]) break;
      idx[d] = 0;
      ooff -= map_str[d] * xs[d];
    }
  }
  if (!keepdims) acc = Tensor(oshape, std::move(acc.data));
  Shape old = xs;
  Shape kshape_copy = kshape;
  return make_op("sum", std::move(acc), {x},
                 [old, kshape_copy](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = broadcast_to(reshape(g, kshape_copy), old);
                   return r;
                 });
}

Var mean(const Var& x) { return cmul(sum(x), 1.0 / static_cast<double>(x.val().numel())); }

Var mean(const Var& x, std::vector<int64_t> axes, bool keepdims) {
  Var s = sum(x, axes, keepdims);
  const double n = static_cast<double>(x.val().numel()) / static_cast<double>(s.val().numel());
  return cmul(s, 1.0 / n);
}

Var concat(const std::vector<Var>& xs, int64_t axis) {
  if (xs.empty()) shape_error("concat", "no inputs");
  const Shape& s0 = xs[0].val().shape;
  const int64_t rank = static_cast<int64_t>(s0.size());
  if (axis < 0 || axis >= rank) shape_error("concat", "axis out of range for " + shape_str(s0));
  int64_t axis_total = 0;
  for (const Var& v : xs) {
    const Shape& s = v.val().shape;
    if (static_cast<int64_t>(s.size()) != rank) shape_error("concat", "rank mismatch");
    for (int64_t i = 0; i < rank; ++i)
      if (i != axis && s[i] != s0[i])
        shape_error("concat", "shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    axis_total += s[axis];
  }
  Shape os = s0;
  os[axis] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s0[i];
  for (int64_t i = axis + 1; i < rank; ++i) inner *= s0[i];
  Tensor out = Tensor::zeros(os);
  int64_t axis_off = 0;
  for (const Var& v : xs) {
    const int64_t part = v.val().shape[axis];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data.data() + (o * axis_total + axis_off) * inner,
                  v.val().data.data() + o * part * inner, part * inner * sizeof(double));
    axis_off += part;
  }
  // vjp: slice g back into the parts
  std::vector<Shape> part_shapes;
  for (const Var& v : xs) part_shapes.push_back(v.val().shape);
  return make_op("concat", std::move(out), xs,
                 [axis, part_shapes](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(part_shapes.size());
                   int64_t off = 0;
                   for (size_t i = 0; i < part_shapes.size(); ++i) {
                     const Shape& ps = part_shapes[i];
                     if (need[i]) {
                       Shape starts(ps.size(), 0), stops = g.shape();
                       starts[axis] = off;
                       stops[axis] = off + ps[axis];
                       r[i] = slice(g, starts, stops);
                     }
                     off += ps[axis];
                   }
                   return r;
                 });
}

Var slice(const Var& x, Shape starts, Shape stops) {
  const Shape& xs = x.val().shape;
  const int64_t rank = static_cast<int64_t>(xs.size());
  if (static_cast<int64_t>(starts.size()) != rank || static_cast<int64_t>(stops.size()) != rank)
    shape_error("slice", "starts/stops rank mismatch for " + shape_str(xs));
  Shape os(rank);
  for (int64_t i = 0; i < rank; ++i) {
    if (starts[i] < 0 || stops[i] > xs[i] || starts[i] >= stops[i])
      shape_error("slice", "bad range on " + shape_str(xs));
    os[i] = stops[i] - starts[i];
  }
  const Shape xstr = strides_of(xs);
  int64_t base = 0;
  for (int64_t i = 0; i < rank; ++i) base += starts[i] * xstr[i];
  Tensor out = Tensor::zeros(os);
  std::vector<int64_t> istr(xstr.begin(), xstr.end());
  strided_gather(x.val().data.data() + base, out.data.data(), os, istr, 0);
  Shape old = xs;
  return make_op("slice", std::move(out), {x},
                 [starts, old](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) r[0] = pad_zero(g, starts, old);
                   return r;
                 });
}

Var pad_zero(const Var& x, Shape starts, Shape full) {
  const Shape& xs = x.val().shape;
  const int64_t rank = static_cast<int64_t>(xs.size());
  if (static_cast<int64_t>(starts.size()) != rank || static_cast<int64_t>(full.size()) != rank)
    shape_error("pad_zero", "starts/full rank mismatch for " + shape_str(xs));
  for (int64_t i = 0; i < rank; ++i)
    if (starts[i] < 0 || starts[i] + xs[i] > full[i])
      shape_error("pad_zero", shape_str(xs) + " at given offset exceeds " + shape_str(full));
  Tensor out = Tensor::zeros(full);
  const Shape ostr = strides_of(full);
  int64_t base = 0;
  for (int64_t i = 0; i < rank; ++i) base += starts[i] * ostr[i];
  // scatter: iterate x row-major, write strided into out
  std::vector<int64_t> idx(rank, 0);
  const double* src = x.val().data.data();
  double* dst = out.data.data() + base;
  const int64_t n = x.val().numel();
  if (rank == 0) {
    *dst = *src;
  } else {
    int64_t ooff = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
      dst[ooff] = src[flat];
      for (int64_t d = rank - 1; d >= 0; --d) {
        ooff += ostr[d];
        if (++idx[d] < xs[d]) break;
        idx[d] = 0;
        ooff -= ostr[d] * xs[d];
      }
    }
  }
  Shape xs_copy = xs;
  return make_op("pad_zero", std::move(out), {x},
                 [starts, xs_copy](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) {
                     Shape stops = starts;
                     for (size_t i = 0; i < stops.size(); ++i) stops[i] += xs_copy[i];
                     r[0] = slice(g, starts, stops);
                   }
                   return r;
                 });
}

Var broadcast_to(const Var& x, Shape target) {
  const Shape& xs = x.val().shape;
  const std::vector<int64_t> istr = broadcast_in_strides(xs, target, "broadcast");
  Tensor out = Tensor::zeros(target);
  strided_gather(x.val().data.data(), out.data.data(), target, istr, 0);
  // expanded axes: prepended dims plus dims where x had extent 1 but target doesn't
  std::vector<int64_t> axes;
  const size_t off = target.size() - xs.size();
  for (size_t i = 0; i < off; ++i) axes.push_back(static_cast<int64_t>(i));
  for (size_t i = 0; i < xs.size(); ++i)
    if (xs[i] == 1 && target[off + i] != 1) axes.push_back(static_cast<int64_t>(off + i));
  Shape xs_copy = xs;
  return make_op("broadcast", std::move(out), {x},
                 [axes, xs_copy](const Var&, const Var& g, const std::vector<char>& need) {
                   std::vector<Var> r(1);
                   if (need[0]) {
                     Var s = axes.empty() ? g : sum(g, axes, /*keepdims=*/true);
                     r[0] = reshape(s, xs_copy);
                   }
                   return r;
                 });
}

Var apply_primitive(const std::string& op, const std::vector<Var>& in) {
  auto need = [&](size_t k) {
    if (in.size() != k)
      shape_error("apply_primitive", op + " expects " + std::to_string(k) + " inputs");
  };
  if (op == "add") { need(2); return add(in[0], in[1]); }
  if (op == "sub") { need(2); return sub(in[0], in[1]); }
  if (op == "mul") { need(2); return mul(in[0], in[1]); }
  if (op == "div") { need(2); return div(in[0], in[1]); }
  if (op == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (op == "transpose") { need(1); return transpose(in[0]); }
  if (op == "reshape") { need(1); return reshape(in[0], {in[0].val().numel()}); }
  if (op == "sum") { need(1); return sum(in[0]); }
  if (op == "mean") { need(1); return mean(in[0]); }
  if (op == "relu") { need(1); return relu(in[0]); }
  if (op == "silu") { need(1); return silu(in[0]); }
  if (op == "softplus") { need(1); return softplus(in[0]); }
  if (op == "exp") { need(1); return exp(in[0]); }
  if (op == "log") { need(1); return log(in[0]); }
  if (op == "square") { need(1); return square(in[0]); }
  if (op == "sqrt") { need(1); return sqrt(in[0]); }
  if (op == "concat") { return concat(in, 0); }
  if (op == "slice") {
    need(1);
    Shape stops = in[0].val().shape;
    return slice(in[0], Shape(stops.size(), 0), stops);
  }
  if (op == "broadcast") { need(1); return broadcast_to(in[0], in[0].val().shape); }
  throw std::runtime_error("apply_primitive: unknown op '" + op + "'");
}

// ----- backward -----

std::vector<Var> backward(const Var& root, const std::vector<Var>& wrt, bool create_graph) {
  if (!root.defined()) throw std::runtime_error("backward: undefined root");
  if (root.val().numel() != 1)
    throw std::runtime_error("backward: root must be scalar, got shape " +
                             shape_str(root.val().shape));

  std::unordered_set<Node*> wrtset;
  for (const Var& w : wrt) wrtset.insert(w.n.get());

  // dependency-ordered topo list (parents before node) over the grad subgraph
  std::vector<Var> topo;
  if (root.requires_grad()) {
    std::unordered_set<Node*> visited{root.n.get()};
    struct Frame {
      Var v;
      size_t next = 0;
    };
    std::vector<Frame> stack{{root, 0}};
    while (!stack.empty()) {
      Frame& f = stack.back();
      Node* nd = f.v.n.get();
      if (f.next < nd->parents.size()) {
        const Var& p = nd->parents[f.next++];
        if (p.defined() && p.requires_grad() && !visited.count(p.n.get())) {
          visited.insert(p.n.get());
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(f.v);
        stack.pop_back();
      }
    }
  }

  // needs(n): n can reach some wrt node via parent edges
  std::unordered_map<Node*, char> needs;
  auto node_needed = [&](const Var& p) -> bool {
    if (!p.defined()) return false;
    if (wrtset.count(p.n.get())) return true;
    auto it = needs.find(p.n.get());
    return it != needs.end() && it->second;
  };
  for (const Var& v : topo) {
    char need = wrtset.count(v.n.get()) ? 1 : 0;
    if (!need)
      for (const Var& p : v.n->parents)
        if (node_needed(p)) {
          need = 1;
          break;
        }
    needs[v.n.get()] = need;
  }

  std::unordered_map<Node*, Var> grad;
  grad[root.n.get()] = constant(Tensor::full(root.val().shape, 1.0));

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const Var& v = *it;
    Node* nd = v.n.get();
    auto git = grad.find(nd);
    if (git == grad.end()) continue;
    Var g = git->second;
    if (!wrtset.count(nd)) grad.erase(git);  // free as we go; results stay
    if (!nd->vjp) continue;
    std::vector<char> need(nd->parents.size(), 0);
    bool any = false;
    for (size_t i = 0; i < nd->parents.size(); ++i) {
      need[i] = node_needed(nd->parents[i]) ? 1 : 0;
      any |= (need[i] != 0);
    }
    if (!any) continue;
    std::vector<Var> pg = nd->vjp(v, g, need);
    for (size_t i = 0; i < nd->parents.size(); ++i) {
      if (!need[i] || !pg[i].defined()) continue;
      Node* p = nd->parents[i].n.get();
      auto pit = grad.find(p);
      if (pit == grad.end())
        grad.emplace(p, pg[i]);
      else
        pit->second = add(pit->second, pg[i]);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto it = grad.find(w.n.get());
    Var g = it != grad.end() ? it->second : constant(Tensor::zeros(w.val().shape));
    out.push_back(create_graph ? g : detach(g));
  }
  return out;
}

double finite_difference_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                               double eps) {
  if (eps <= 0) throw std::runtime_error("finite_difference_check: eps must be positive");
  Var xl = leaf(x);
  Var y = f(xl);
  if (y.val().numel() != 1) throw std::runtime_error("finite_difference_check: f must be scalar");
  if (!std::isfinite(y.val().data[0]))
    throw std::runtime_error("finite_difference_check: non-finite f(x)");
  const Tensor ad = backward(y, {xl})[0].val();

  double max_rel = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp.data[i] += eps;
    xm.data[i] -= eps;
    // leaf, not constant: f may contain an inner backward() over its argument
    const double fp = f(leaf(xp)).val().scalar();
    const double fm = f(leaf(xm)).val().scalar();
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_check: non-finite f at perturbed point");
    const double fd = (fp - fm) / (2.0 * eps);
    const double rel = std::fabs(ad.data[i] - fd) /
                       std::max({std::fabs(ad.data[i]), std::fabs(fd), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace sami
