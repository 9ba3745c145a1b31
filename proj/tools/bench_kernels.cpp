// Micro-benchmark comparing the serial reference kernels against the OpenMP
// path. Prints one row per kernel shape with both timings, the speedup, and
// a bit-equality check of the two results (the decomposition is required to
// be bit-identical at any thread count).
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "sami/kernels.hpp"
#include "sami/rng.hpp"
#include "sami/tensor.hpp"

using namespace sami;

namespace {

double time_best_of(const std::function<Tensor()>& fn, int reps, Tensor* out) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor y = fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    if (r == 0) *out = std::move(y);
  }
  return best;
}

struct Case {
  std::string name;
  std::function<Tensor()> fn;
  double flops;  // fused multiply-adds counted as 2
};

void run_case(const Case& c, int reps) {
  Tensor serial = Tensor::zeros({1}), parallel = Tensor::zeros({1});
  kernels::set_parallel_kernels(false);
  const double ts = time_best_of(c.fn, reps, &serial);
  kernels::set_parallel_kernels(true);
  const double tp = time_best_of(c.fn, reps, &parallel);
  std::printf("%-34s %9.3f ms %9.3f ms  x%-5.2f %7.2f GF/s  %s\n", c.name.c_str(), ts * 1e3,
              tp * 1e3, ts / tp, c.flops / tp * 1e-9,
              t_bit_equal(serial, parallel) ? "bit-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
  RngStream rng(42);

  // typical shapes from the disks model: 32x32 images, base width 16..128
  const Tensor a = rng.normal_tensor({256, 512});
  const Tensor b = rng.normal_tensor({512, 512});
  const Tensor a2 = rng.normal_tensor({64, 2048});
  const Tensor b2 = rng.normal_tensor({2048, 256});

  const Tensor x16 = rng.normal_tensor({64, 16, 32, 32});
  const Tensor w16 = rng.normal_tensor({16, 16, 3, 3});
  const Tensor gy16 = rng.normal_tensor({64, 16, 32, 32});
  const Tensor x32 = rng.normal_tensor({16, 32, 16, 16});
  const Tensor w32 = rng.normal_tensor({32, 32, 3, 3});
  const Tensor gy32 = rng.normal_tensor({16, 32, 16, 16});

  const double f_mm = 2.0 * 256 * 512 * 512;
  const double f_mm2 = 2.0 * 64 * 2048 * 256;
  const double f_c16 = 2.0 * 64 * 16 * 32 * 32 * 16 * 3 * 3;
  const double f_c32 = 2.0 * 16 * 32 * 16 * 16 * 32 * 3 * 3;

  std::vector<Case> cases = {
      {"matmul 256x512 * 512x512", [&] { return kernels::matmul(a, b); }, f_mm},
      {"matmul 64x2048 * 2048x256", [&] { return kernels::matmul(a2, b2); }, f_mm2},
      {"conv2d fwd 64x16x32x32 k3",
       [&] { return kernels::conv2d_forward(x16, w16, 1, 1); }, f_c16},
      {"conv2d input-grad 64x16x32x32 k3",
       [&] { return kernels::conv2d_input_grad(gy16, w16, 1, 1, x16.shape); }, f_c16},
      {"conv2d weight-grad 64x16x32x32 k3",
       [&] { return kernels::conv2d_weight_grad(x16, gy16, 1, 1, w16.shape); }, f_c16},
      {"conv2d fwd 16x32x16x16 k3",
       [&] { return kernels::conv2d_forward(x32, w32, 1, 1); }, f_c32},
      {"conv2d input-grad 16x32x16x16 k3",
       [&] { return kernels::conv2d_input_grad(gy32, w32, 1, 1, x32.shape); }, f_c32},
      {"conv2d weight-grad 16x32x16x16 k3",
       [&] { return kernels::conv2d_weight_grad(x32, gy32, 1, 1, w32.shape); }, f_c32},
  };

  std::printf("%-34s %12s %12s %7s %13s\n", "kernel", "serial", "openmp", "ratio",
              "throughput");
  for (const Case& c : cases) run_case(c, reps);
  kernels::set_parallel_kernels(true);
  return 0;
}
