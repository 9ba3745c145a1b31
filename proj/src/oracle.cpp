#include "sami/oracle.hpp"

#include <cmath>
#include <stdexcept>

#include "sami/kernels.hpp"

namespace sami {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_square(const Tensor& S) {
  if (S.rank() != 2 || S.shape[0] != S.shape[1])
    throw std::runtime_error("oracle: expected a square matrix, got " + shape_str(S.shape));
}

void check_vec(const Tensor& v, int64_t k, const char* what) {
  if (v.shape != Shape{k})
    throw std::runtime_error(std::string("oracle: ") + what + " must be [" + std::to_string(k) +
                             "], got " + shape_str(v.shape));
}

Tensor mat_t(const Tensor& a) {
  Tensor out = Tensor::zeros({a.shape[1], a.shape[0]});
  for (int64_t i = 0; i < a.shape[0]; ++i)
    for (int64_t j = 0; j < a.shape[1]; ++j) out.data[j * a.shape[0] + i] = a.data[i * a.shape[1] + j];
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& v) {
  Tensor out = Tensor::zeros({a.shape[0]});
  for (int64_t i = 0; i < a.shape[0]; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < a.shape[1]; ++j) acc += a.data[i * a.shape[1] + j] * v.data[j];
    out.data[i] = acc;
  }
  return out;
}

// abar S + (1-abar) I
Tensor noisy_cov(const GaussianWorld& w, double abar) {
  const int64_t D = w.m.shape[0];
  Tensor M = Tensor::zeros({D, D});
  for (int64_t i = 0; i < D; ++i)
    for (int64_t j = 0; j < D; ++j)
      M.data[i * D + j] = abar * w.S.data[i * D + j] + (i == j ? 1.0 - abar : 0.0);
  return M;
}

void check_world(const GaussianWorld& w) {
  check_square(w.S);
  const int64_t D = w.S.shape[0];
  check_vec(w.m, D, "world mean");
  if (w.A.rank() != 2 || w.A.shape[1] != D)
    throw std::runtime_error("oracle: observation map must be [d," + std::to_string(D) +
                             "], got " + shape_str(w.A.shape));
  if (!(w.sigma_z2 > 0.0)) throw std::runtime_error("oracle: sigma_z2 must be > 0");
}

}  // namespace

// ----- dense SPD helpers -----

Tensor cholesky(const Tensor& S) {
  check_square(S);
  const int64_t n = S.shape[0];
  Tensor L = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double acc = S.data[i * n + j];
      for (int64_t k = 0; k < j; ++k) acc -= L.data[i * n + k] * L.data[j * n + k];
      if (i == j) {
        if (!(acc > 0.0))
          throw std::runtime_error("oracle: matrix is not positive definite (pivot " +
                                   std::to_string(i) + ")");
        L.data[i * n + i] = std::sqrt(acc);
      } else {
        L.data[i * n + j] = acc / L.data[j * n + j];
      }
    }
  }
  return L;
}

Tensor chol_solve(const Tensor& L, const Tensor& b) {
  check_square(L);
  const int64_t n = L.shape[0];
  const bool vec = b.rank() == 1;
  if (vec ? b.shape[0] != n : (b.rank() != 2 || b.shape[0] != n))
    throw std::runtime_error("oracle: right-hand side " + shape_str(b.shape) +
                             " does not match the factor size " + std::to_string(n));
  const int64_t cols = vec ? 1 : b.shape[1];
  Tensor x = b;
  // forward substitution L y = b, then back substitution L^T x = y
  for (int64_t c = 0; c < cols; ++c) {
    for (int64_t i = 0; i < n; ++i) {
      double acc = x.data[i * cols + c];
      for (int64_t k = 0; k < i; ++k) acc -= L.data[i * n + k] * x.data[k * cols + c];
      x.data[i * cols + c] = acc / L.data[i * n + i];
    }
    for (int64_t i = n - 1; i >= 0; --i) {
      double acc = x.data[i * cols + c];
      for (int64_t k = i + 1; k < n; ++k) acc -= L.data[k * n + i] * x.data[k * cols + c];
      x.data[i * cols + c] = acc / L.data[i * n + i];
    }
  }
  return x;
}

double chol_logdet(const Tensor& L) {
  check_square(L);
  double acc = 0.0;
  for (int64_t i = 0; i < L.shape[0]; ++i) acc += std::log(L.data[i * L.shape[0] + i]);
  return 2.0 * acc;
}

double gaussian_log_density(const GaussianDist& g, const Tensor& x) {
  const int64_t k = g.mean.shape[0];
  check_vec(x, k, "density argument");
  Tensor L = cholesky(g.cov);
  Tensor r = t_sub(x, g.mean);
  Tensor u = chol_solve(L, r);
  double quad = 0.0;
  for (int64_t i = 0; i < k; ++i) quad += r.data[i] * u.data[i];
  return -0.5 * (quad + chol_logdet(L) + static_cast<double>(k) * kLog2Pi);
}

// ----- world construction and sampling -----

GaussianWorld random_world(RngStream& rng, int64_t D, int64_t d, double sigma_z2) {
  if (D < 1 || d < 1) throw std::runtime_error("oracle: world dimensions must be >= 1");
  Tensor B = rng.normal_tensor({D, D});
  Tensor S = Tensor::zeros({D, D});
  for (int64_t i = 0; i < D; ++i)
    for (int64_t j = 0; j < D; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < D; ++k) acc += B.data[i * D + k] * B.data[j * D + k];
      S.data[i * D + j] = acc / static_cast<double>(D) + (i == j ? 0.5 : 0.0);
    }
  GaussianWorld w{rng.normal_tensor({D}), S, rng.normal_tensor({d, D}), sigma_z2};
  check_world(w);
  return w;
}

Tensor world_sample_batch(const GaussianWorld& w, RngStream& rng, int64_t n) {
  check_world(w);
  if (n < 1) throw std::runtime_error("oracle: need n >= 1 samples");
  const int64_t D = w.m.shape[0];
  Tensor L = cholesky(w.S);
  Tensor xi = rng.normal_tensor({n, D});
  Tensor out = Tensor::zeros({n, D});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t i = 0; i < D; ++i) {
      double acc = w.m.data[i];
      for (int64_t k = 0; k <= i; ++k) acc += L.data[i * D + k] * xi.data[r * D + k];
      out.data[r * D + i] = acc;
    }
  return out;
}

// ----- closed forms along the forward process -----

Tensor marginal_score(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                      const Tensor& x_t) {
  check_world(w);
  sched.check_level(t);
  const int64_t D = w.m.shape[0];
  check_vec(x_t, D, "x_t");
  const double abar = sched.alpha_bar[t];
  Tensor L = cholesky(noisy_cov(w, abar));
  Tensor r = Tensor::zeros({D});
  for (int64_t i = 0; i < D; ++i) r.data[i] = x_t.data[i] - std::sqrt(abar) * w.m.data[i];
  Tensor u = chol_solve(L, r);
  for (auto& v : u.data) v = -v;
  return u;
}

Tensor analytic_denoiser(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                         const Tensor& x_t) {
  Tensor s = marginal_score(w, sched, t, x_t);
  const double g = sched.gamma(t);
  for (auto& v : s.data) v = -g * v;
  return s;
}

GaussianDist posterior_x0_given_xt(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                                   const Tensor& x_t) {
  check_world(w);
  sched.check_level(t);
  const int64_t D = w.m.shape[0];
  check_vec(x_t, D, "x_t");
  const double abar = sched.alpha_bar[t];
  const double ra = std::sqrt(abar);
  Tensor L = cholesky(noisy_cov(w, abar));

  Tensor r = Tensor::zeros({D});
  for (int64_t i = 0; i < D; ++i) r.data[i] = x_t.data[i] - ra * w.m.data[i];
  Tensor u = chol_solve(L, r);          // M^{-1} (x - sqrt(abar) m)
  Tensor Su = matvec(w.S, u);
  Tensor mean = Tensor::zeros({D});
  for (int64_t i = 0; i < D; ++i) mean.data[i] = w.m.data[i] + ra * Su.data[i];

  Tensor X = chol_solve(L, w.S);        // M^{-1} S
  Tensor SX = kernels::matmul(w.S, X);  // S M^{-1} S
  Tensor cov = Tensor::zeros({D, D});
  for (int64_t i = 0; i < D * D; ++i) cov.data[i] = w.S.data[i] - abar * SX.data[i];
  return {mean, cov};
}

GaussianDist latent_given_xt(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                             const Tensor& x_t) {
  GaussianDist p0 = posterior_x0_given_xt(w, sched, t, x_t);
  const int64_t d = w.A.shape[0];
  Tensor mean = matvec(w.A, p0.mean);
  Tensor AS = kernels::matmul(w.A, p0.cov);
  Tensor cov = kernels::matmul(AS, mat_t(w.A));
  for (int64_t i = 0; i < d; ++i) cov.data[i * d + i] += w.sigma_z2;
  return {mean, cov};
}

Tensor oracle_guidance(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                       const Tensor& x_t, const Tensor& z) {
  check_world(w);
  const int64_t d = w.A.shape[0];
  check_vec(z, d, "z");
  GaussianDist pz = latent_given_xt(w, sched, t, x_t);
  Tensor Lc = cholesky(pz.cov);
  Tensor resid = t_sub(z, pz.mean);
  Tensor u = chol_solve(Lc, resid);      // C^{-1} (z - A m_{0|t})
  Tensor v = matvec(mat_t(w.A), u);      // A^T u
  Tensor Sv = matvec(w.S, v);
  const double abar = sched.alpha_bar[t];
  Tensor Lm = cholesky(noisy_cov(w, abar));
  Tensor g = chol_solve(Lm, Sv);         // M^{-1} S A^T u
  const double ra = std::sqrt(abar);
  for (auto& x : g.data) x *= ra;
  return g;
}

GaussianDist conditional_posterior(const GaussianWorld& w, const Tensor& z) {
  check_world(w);
  const int64_t d = w.A.shape[0];
  check_vec(z, d, "z");
  Tensor At = mat_t(w.A);
  Tensor SAt = kernels::matmul(w.S, At);           // [D,d]
  Tensor K = kernels::matmul(w.A, SAt);            // A S A^T
  for (int64_t i = 0; i < d; ++i) K.data[i * d + i] += w.sigma_z2;
  Tensor Lk = cholesky(K);

  Tensor resid = Tensor::zeros({d});
  Tensor Am = matvec(w.A, w.m);
  for (int64_t i = 0; i < d; ++i) resid.data[i] = z.data[i] - Am.data[i];
  Tensor u = chol_solve(Lk, resid);
  Tensor mean = t_add(w.m, matvec(SAt, u));

  Tensor X = chol_solve(Lk, mat_t(SAt));           // K^{-1} A S, [d,D]
  Tensor cov = t_sub(w.S, kernels::matmul(SAt, X));
  return {mean, cov};
}

Tensor conditional_score(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                         const Tensor& x_t, const Tensor& z) {
  sched.check_level(t);
  const int64_t D = w.m.shape[0];
  check_vec(x_t, D, "x_t");
  GaussianDist post = conditional_posterior(w, z);
  const double abar = sched.alpha_bar[t];
  const double ra = std::sqrt(abar);
  Tensor M = Tensor::zeros({D, D});
  for (int64_t i = 0; i < D; ++i)
    for (int64_t j = 0; j < D; ++j)
      M.data[i * D + j] = abar * post.cov.data[i * D + j] + (i == j ? 1.0 - abar : 0.0);
  Tensor L = cholesky(M);
  Tensor r = Tensor::zeros({D});
  for (int64_t i = 0; i < D; ++i) r.data[i] = x_t.data[i] - ra * post.mean.data[i];
  Tensor u = chol_solve(L, r);
  for (auto& v : u.data) v = -v;
  return u;
}

// ----- guided ancestral sampling -----

Tensor oracle_guided_samples(const GaussianWorld& w, const NoiseSchedule& sched, const Tensor& z,
                             RngStream& rng, int64_t n, CoefficientRule rule, RunLog* log) {
  check_world(w);
  if (n < 1) throw std::runtime_error("oracle: need n >= 1 chains");
  const int64_t D = w.m.shape[0];
  check_vec(z, w.A.shape[0], "z");

  auto rowwise = [D](const Tensor& x, auto&& fn) {
    Tensor out = Tensor::zeros(x.shape);
    const int64_t rows = x.shape[0];
    for (int64_t r = 0; r < rows; ++r) {
      Tensor row = Tensor::zeros({D});
      std::copy(x.data.begin() + r * D, x.data.begin() + (r + 1) * D, row.data.begin());
      Tensor y = fn(row);
      std::copy(y.data.begin(), y.data.end(), out.data.begin() + r * D);
    }
    return out;
  };
  EpsFn eps_fn = [&](const Tensor& x, int64_t t) {
    return rowwise(x, [&](const Tensor& row) { return analytic_denoiser(w, sched, t, row); });
  };
  GuideFn guide_fn = [&](const Tensor& x, int64_t t) {
    return rowwise(x, [&](const Tensor& row) { return oracle_guidance(w, sched, t, row, z); });
  };

  Tensor x_init = rng.normal_tensor({n, 1, 1, D});
  Tensor out = sample_loop(eps_fn, &guide_fn, sched, x_init, rule, rng, log);
  return Tensor({n, D}, out.data);
}

}  // namespace sami
