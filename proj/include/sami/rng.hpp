// Counter-based splittable RNG. out(counter) = splitmix_mix(key + counter*GAMMA),
// so a (key, counter) pair fully determines every draw on every platform: the
// integer pipeline is exact, and the float transforms below use only IEEE ops
// plus libm log/cos/sqrt. Streams split by tag never share (key, counter) pairs
// because child keys are produced by mixing, not offsetting.
//
// With key = 0 this reproduces the published SplitMix64 reference sequence
// (tests freeze those vectors).
#pragma once

#include <cstdint>

#include "sami/tensor.hpp"

namespace sami {

class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t counter = 0) : key_(seed), counter_(counter) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    counter_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = key_ + counter_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, exactly two counter steps per draw (no cached spare, so the
  // counter position after n draws is seed-independent).
  double normal();

  // Independent child stream; does not advance this stream's counter.
  RngStream split(uint64_t tag) const { return RngStream(mix(key_ ^ mix(tag)), 0); }

  Tensor normal_tensor(const Shape& s);
  Tensor uniform_tensor(const Shape& s, double lo, double hi);

  uint64_t key() const { return key_; }
  uint64_t counter_raw() const { return counter_; }

 private:
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace sami
