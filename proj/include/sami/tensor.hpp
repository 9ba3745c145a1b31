// Dense row-major f64 tensor: the universal value type. Rank 0 = scalar.
// Values are treated as immutable once built; the optimizer re-values
// parameter leaves between tapes, which is the one sanctioned mutation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sami {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> data;  // row-major, size == product(shape)

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  double scalar() const;  // rank-0/numel-1 accessor, throws otherwise

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor scalar_of(double v);  // rank-0
  static Tensor from(const Shape& s, std::vector<double> d) { return Tensor(s, std::move(d)); }
};

bool same_shape(const Tensor& a, const Tensor& b);
Shape strides_of(const Shape& s);

// Elementwise helpers on raw tensors (no autodiff). Fixed iteration order.
Tensor t_add(const Tensor& a, const Tensor& b);
Tensor t_sub(const Tensor& a, const Tensor& b);
Tensor t_mul(const Tensor& a, const Tensor& b);
Tensor t_scale(const Tensor& a, double c);
Tensor t_axpy(double c, const Tensor& x, const Tensor& y);  // c*x + y
double t_dot(const Tensor& a, const Tensor& b);
double t_sum(const Tensor& a);
double t_norm2(const Tensor& a);  // sqrt(sum of squares)
double t_max_abs(const Tensor& a);
// mean over rows (axis 0) of scale * ||row||_2
double t_mean_row_norm(const Tensor& a, double scale = 1.0);
bool t_all_finite(const Tensor& a);
bool t_bit_equal(const Tensor& a, const Tensor& b);

// Throws std::runtime_error with op name and offending shapes.
[[noreturn]] void shape_error(const std::string& op, const std::string& detail);

}  // namespace sami
