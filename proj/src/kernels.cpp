#include "sami/kernels.hpp"

#include <atomic>

namespace sami::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Column tile kept L2-resident across the i loop; k blocks processed in
// ascending order so every C[i,j] accumulates over k in exactly the same
// order at any blocking or thread count.
constexpr int64_t kJTile = 512;
constexpr int64_t kKBlock = 128;

inline void mm_tile(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n,
                    int64_t j0, int64_t j1) {
  for (int64_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (int64_t j = j0; j < j1; ++j) c[j] = 0.0;
  }
  for (int64_t kb = 0; kb < k; kb += kKBlock) {
    const int64_t ke = std::min(k, kb + kKBlock);
    int64_t i = 0;
    for (; i + 4 <= m; i += 4) {  // 4-row register blocking: reuses each B row
      double* c0 = C + (i + 0) * n;
      double* c1 = C + (i + 1) * n;
      double* c2 = C + (i + 2) * n;
      double* c3 = C + (i + 3) * n;
      const double* a0 = A + (i + 0) * k;
      const double* a1 = A + (i + 1) * k;
      const double* a2 = A + (i + 2) * k;
      const double* a3 = A + (i + 3) * k;
      for (int64_t kk = kb; kk < ke; ++kk) {
        const double* b = B + kk * n;
        const double v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
        for (int64_t j = j0; j < j1; ++j) {
          const double bj = b[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < m; ++i) {
      double* c = C + i * n;
      const double* a = A + i * k;
      for (int64_t kk = kb; kk < ke; ++kk) {
        const double v = a[kk];
        const double* b = B + kk * n;
        for (int64_t j = j0; j < j1; ++j) c[j] += v * b[j];
      }
    }
  }
}

// Contiguous dot with four accumulator chains; the split is fixed by the code,
// not the thread count, so results are bit-stable.
inline double dot4(const double* a, const double* b, int64_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + s2) + s3;
}

struct ConvDims {
  int64_t B, Cin, H, W, Cout, kh, kw, Ho, Wo, K;
};

ConvDims conv_dims(const char* op, const Shape& xs, const Shape& ws, int64_t stride, int64_t pad) {
  if (xs.size() != 4 || ws.size() != 4)
    shape_error(op, "expected x [B,Cin,H,W] and w [Cout,Cin,kh,kw], got " + shape_str(xs) + " and " +
                        shape_str(ws));
  ConvDims d{};
  d.B = xs[0];
  d.Cin = xs[1];
  d.H = xs[2];
  d.W = xs[3];
  d.Cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  if (ws[1] != d.Cin)
    shape_error(op, "channel mismatch x " + shape_str(xs) + " vs w " + shape_str(ws));
  if (stride < 1 || pad < 0) shape_error(op, "bad stride/pad");
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.Ho < 1 || d.Wo < 1)
    shape_error(op, "kernel " + shape_str(ws) + " does not fit input " + shape_str(xs));
  d.K = d.Cin * d.kh * d.kw;
  return d;
}

// cols [K, B*Ho*Wo]; row r = (ci*kh + u)*kw + v. Rows are disjoint -> parallel.
std::vector<double> im2col(const Tensor& x, const ConvDims& d, int64_t stride, int64_t pad) {
  const int64_t ncol = d.B * d.Ho * d.Wo;
  std::vector<double> cols(static_cast<size_t>(d.K) * ncol, 0.0);
  const bool par = parallel_kernels();
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < d.K; ++r) {
    const int64_t ci = r / (d.kh * d.kw);
    const int64_t u = (r / d.kw) % d.kh;
    const int64_t v = r % d.kw;
    double* row = cols.data() + r * ncol;
    for (int64_t b = 0; b < d.B; ++b) {
      const double* xc = x.data.data() + (b * d.Cin + ci) * d.H * d.W;
      double* out = row + b * d.Ho * d.Wo;
      for (int64_t oy = 0; oy < d.Ho; ++oy) {
        const int64_t iy = oy * stride - pad + u;
        if (iy < 0 || iy >= d.H) continue;  // stays zero
        for (int64_t ox = 0; ox < d.Wo; ++ox) {
          const int64_t ix = ox * stride - pad + v;
          if (ix < 0 || ix >= d.W) continue;
          out[oy * d.Wo + ox] = xc[iy * d.W + ix];
        }
      }
    }
  }
  return cols;
}

// gy [B,Cout,Ho,Wo] regrouped as [Cout, B*Ho*Wo] to line up with cols.
std::vector<double> pack_gy(const Tensor& gy, const ConvDims& d) {
  const int64_t ncol = d.B * d.Ho * d.Wo;
  std::vector<double> out(static_cast<size_t>(d.Cout) * ncol);
  const bool par = parallel_kernels();
#pragma omp parallel for schedule(static) if (par)
  for (int64_t co = 0; co < d.Cout; ++co) {
    double* row = out.data() + co * ncol;
    for (int64_t b = 0; b < d.B; ++b) {
      const double* src = gy.data.data() + (b * d.Cout + co) * d.Ho * d.Wo;
      std::copy(src, src + d.Ho * d.Wo, row + b * d.Ho * d.Wo);
    }
  }
  return out;
}

}  // namespace

void set_parallel_kernels(bool on) { g_parallel.store(on); }
bool parallel_kernels() { return g_parallel.load(); }

void matmul_raw(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  const int64_t ntiles = (n + kJTile - 1) / kJTile;
  const bool par = parallel_kernels();
#pragma omp parallel for schedule(static) if (par && ntiles > 1)
  for (int64_t t = 0; t < ntiles; ++t) {
    const int64_t j0 = t * kJTile;
    mm_tile(A, B, C, m, k, n, j0, std::min(n, j0 + kJTile));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    shape_error("matmul", "shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor c = Tensor::zeros({a.shape[0], b.shape[1]});
  matmul_raw(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1]);
  return c;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
  const ConvDims d = conv_dims("conv2d", x.shape, w.shape, stride, pad);
  const int64_t ncol = d.B * d.Ho * d.Wo;
  const std::vector<double> cols = im2col(x, d, stride, pad);
  std::vector<double> yflat(static_cast<size_t>(d.Cout) * ncol);
  matmul_raw(w.data.data(), cols.data(), yflat.data(), d.Cout, d.K, ncol);
  Tensor y = Tensor::zeros({d.B, d.Cout, d.Ho, d.Wo});
  const bool par = parallel_kernels();
#pragma omp parallel for schedule(static) if (par)
  for (int64_t co = 0; co < d.Cout; ++co) {
    const double* row = yflat.data() + co * ncol;
    for (int64_t b = 0; b < d.B; ++b) {
      double* dst = y.data.data() + (b * d.Cout + co) * d.Ho * d.Wo;
      std::copy(row + b * d.Ho * d.Wo, row + (b + 1) * d.Ho * d.Wo, dst);
    }
  }
  return y;
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int64_t stride, int64_t pad,
                         const Shape& x_shape) {
  const ConvDims d = conv_dims("conv2d_input_grad", x_shape, w.shape, stride, pad);
  if (gy.shape != Shape{d.B, d.Cout, d.Ho, d.Wo})
    shape_error("conv2d_input_grad", "gy " + shape_str(gy.shape) + " inconsistent with x " +
                                         shape_str(x_shape) + ", w " + shape_str(w.shape));
  const int64_t ncol = d.B * d.Ho * d.Wo;
  const std::vector<double> gyp = pack_gy(gy, d);

  // wT [K, Cout]
  std::vector<double> wT(static_cast<size_t>(d.K) * d.Cout);
  for (int64_t co = 0; co < d.Cout; ++co)
    for (int64_t r = 0; r < d.K; ++r) wT[r * d.Cout + co] = w.data[co * d.K + r];

  std::vector<double> cols(static_cast<size_t>(d.K) * ncol);
  matmul_raw(wT.data(), gyp.data(), cols.data(), d.K, d.Cout, ncol);

  // col2im scatter-add. Each input channel is touched only by its own kernel
  // rows, so channels parallelize without write conflicts; within a channel
  // the (u,v,b,oy,ox) order is fixed.
  Tensor gx = Tensor::zeros(x_shape);
  const bool par = parallel_kernels();
#pragma omp parallel for schedule(static) if (par)
  for (int64_t ci = 0; ci < d.Cin; ++ci) {
    for (int64_t u = 0; u < d.kh; ++u) {
      for (int64_t v = 0; v < d.kw; ++v) {
        const int64_t r = (ci * d.kh + u) * d.kw + v;
        const double* row = cols.data() + r * ncol;
        for (int64_t b = 0; b < d.B; ++b) {
          double* xc = gx.data.data() + (b * d.Cin + ci) * d.H * d.W;
          const double* src = row + b * d.Ho * d.Wo;
          for (int64_t oy = 0; oy < d.Ho; ++oy) {
            const int64_t iy = oy * stride - pad + u;
            if (iy < 0 || iy >= d.H) continue;
            for (int64_t ox = 0; ox < d.Wo; ++ox) {
              const int64_t ix = ox * stride - pad + v;
              if (ix < 0 || ix >= d.W) continue;
              xc[iy * d.W + ix] += src[oy * d.Wo + ox];
            }
          }
        }
      }
    }
  }
  return gx;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int64_t stride, int64_t pad,
                          const Shape& w_shape) {
  const ConvDims d = conv_dims("conv2d_weight_grad", x.shape, w_shape, stride, pad);
  if (gy.shape != Shape{d.B, d.Cout, d.Ho, d.Wo})
    shape_error("conv2d_weight_grad", "gy " + shape_str(gy.shape) + " inconsistent with x " +
                                          shape_str(x.shape) + ", w " + shape_str(w_shape));
  const int64_t ncol = d.B * d.Ho * d.Wo;
  const std::vector<double> cols = im2col(x, d, stride, pad);
  const std::vector<double> gyp = pack_gy(gy, d);
  Tensor gw = Tensor::zeros(w_shape);
  const bool par = parallel_kernels();
#pragma omp parallel for schedule(static) if (par)
  for (int64_t co = 0; co < d.Cout; ++co)
    for (int64_t r = 0; r < d.K; ++r)
      gw.data[co * d.K + r] = dot4(gyp.data() + co * ncol, cols.data() + r * ncol, ncol);
  return gw;
}

}  // namespace sami::kernels
