// Hot compute kernels: blocked matmul and the im2col conv2d family (forward,
// input gradient, weight gradient). Each kernel has a serial reference path
// and an OpenMP path selected at runtime via set_parallel_kernels(). The
// parallel decomposition is over disjoint output regions with fixed-order
// inner accumulation, so both paths produce bit-identical results at any
// thread count — tests assert this, and bench_kernels compares speed.
#pragma once

#include "sami/tensor.hpp"

namespace sami::kernels {

void set_parallel_kernels(bool on);
bool parallel_kernels();

// C[m,n] = A[m,k] * B[k,n]; C is overwritten. Accumulation over k is always
// ascending regardless of blocking or thread count.
void matmul_raw(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n);

Tensor matmul(const Tensor& a, const Tensor& b);

// x [B,Cin,H,W], w [Cout,Cin,kh,kw] -> y [B,Cout,Ho,Wo]
// Ho = (H + 2*pad - kh)/stride + 1 (floor), likewise Wo.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad);

// gy [B,Cout,Ho,Wo], w as above -> gx [B,Cin,H,W] for the given input shape.
// Also serves as the transposed-convolution forward (upsampling).
Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int64_t stride, int64_t pad,
                         const Shape& x_shape);

// x, gy as above -> gw [Cout,Cin,kh,kw] for the given weight shape.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int64_t stride, int64_t pad,
                          const Shape& w_shape);

}  // namespace sami::kernels
