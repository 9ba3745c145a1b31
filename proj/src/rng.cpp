#include "sami/rng.hpp"

#include <cmath>

namespace sami {

double RngStream::normal() {
  // u1 in (0, 1] so log is finite; u2 in [0, 1).
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Tensor RngStream::normal_tensor(const Shape& s) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.data) v = normal();
  return t;
}

Tensor RngStream::uniform_tensor(const Shape& s, double lo, double hi) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.data) v = uniform(lo, hi);
  return t;
}

}  // namespace sami
