#include "sami/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace sami {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void shape_error(const std::string& op, const std::string& detail) {
  throw std::runtime_error(op + ": " + detail);
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  for (int64_t dim : shape)
    if (dim <= 0) shape_error("Tensor", "non-positive dim in " + shape_str(shape));
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    shape_error("Tensor", "shape " + shape_str(shape) + " does not match data size " +
                              std::to_string(data.size()));
}

double Tensor::scalar() const {
  if (numel() != 1) shape_error("scalar", "tensor of shape " + shape_str(shape) + " is not a scalar");
  return data[0];
}

Shape strides_of(const Shape& s) {
  Shape st(s.size());
  int64_t acc = 1;
  for (int64_t i = static_cast<int64_t>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

static int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size()) shape_error("at", "rank mismatch for " + shape_str(shape));
  int64_t flat = 0, i = 0;
  for (int64_t v : idx) {
    if (v < 0 || v >= shape[i]) shape_error("at", "index out of range in " + shape_str(shape));
    flat = flat * shape[i] + v;
    ++i;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<int64_t> idx) { return data[flat_index(shape, idx)]; }
double Tensor::at(std::initializer_list<int64_t> idx) const { return data[flat_index(shape, idx)]; }

Tensor Tensor::zeros(const Shape& s) { return Tensor(s, std::vector<double>(shape_numel(s), 0.0)); }
Tensor Tensor::full(const Shape& s, double v) { return Tensor(s, std::vector<double>(shape_numel(s), v)); }
Tensor Tensor::scalar_of(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

static void check_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    shape_error(op, "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Tensor t_add(const Tensor& a, const Tensor& b) {
  check_same("t_add", a, b);
  Tensor r = a;
  for (int64_t i = 0; i < r.numel(); ++i) r.data[i] += b.data[i];
  return r;
}

Tensor t_sub(const Tensor& a, const Tensor& b) {
  check_same("t_sub", a, b);
  Tensor r = a;
  for (int64_t i = 0; i < r.numel(); ++i) r.data[i] -= b.data[i];
  return r;
}

Tensor t_mul(const Tensor& a, const Tensor& b) {
  check_same("t_mul", a, b);
  Tensor r = a;
  for (int64_t i = 0; i < r.numel(); ++i) r.data[i] *= b.data[i];
  return r;
}

Tensor t_scale(const Tensor& a, double c) {
  Tensor r = a;
  for (double& v : r.data) v *= c;
  return r;
}

Tensor t_axpy(double c, const Tensor& x, const Tensor& y) {
  check_same("t_axpy", x, y);
  Tensor r = y;
  for (int64_t i = 0; i < r.numel(); ++i) r.data[i] += c * x.data[i];
  return r;
}

double t_dot(const Tensor& a, const Tensor& b) {
  check_same("t_dot", a, b);
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double t_sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data) s += v;  // fixed left-to-right order
  return s;
}

double t_norm2(const Tensor& a) {
  double s = 0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

double t_max_abs(const Tensor& a) {
  double m = 0;
  for (double v : a.data) m = std::max(m, std::fabs(v));
  return m;
}

double t_mean_row_norm(const Tensor& a, double scale) {
  if (a.rank() < 1 || a.shape[0] < 1) shape_error("t_mean_row_norm", "need a leading axis");
  const int64_t rows = a.shape[0];
  const int64_t per = a.numel() / rows;
  double acc = 0;
  for (int64_t r = 0; r < rows; ++r) {
    double ss = 0;
    for (int64_t i = r * per; i < (r + 1) * per; ++i) ss += a.data[i] * a.data[i];
    acc += std::sqrt(ss) * scale;
  }
  return acc / static_cast<double>(rows);
}

bool t_all_finite(const Tensor& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool t_bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace sami
