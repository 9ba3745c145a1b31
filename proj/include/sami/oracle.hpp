// Closed-form linear-Gaussian world: data x0 ~ N(m, S) with a linear
// observation z = A x0 + N(0, sigma_z^2 I). Every quantity the diffusion and
// guidance stack estimates numerically has an exact expression here, so the
// score identities and the guided sampler can be checked against ground
// truth. Dimensions are tiny (the default world is D=4, d=2); all linear
// algebra goes through an explicit Cholesky factorization.
#pragma once

#include <cstdint>

#include "sami/diffusion.hpp"
#include "sami/rng.hpp"
#include "sami/runlog.hpp"
#include "sami/schedule.hpp"
#include "sami/tensor.hpp"

namespace sami {

struct GaussianWorld {
  Tensor m;          // [D] data mean
  Tensor S;          // [D,D] data covariance, symmetric positive definite
  Tensor A;          // [d,D] observation map; the analytic encoder mean is A x
  double sigma_z2;   // observation noise variance
};

struct GaussianDist {
  Tensor mean;  // [k]
  Tensor cov;   // [k,k]
};

// ----- dense symmetric-positive-definite helpers -----

// Lower-triangular L with L L^T = S; throws when S is not positive definite
// (which also covers singular inputs).
Tensor cholesky(const Tensor& S);

// Solves (L L^T) x = b for b of shape [k] or [k,n].
Tensor chol_solve(const Tensor& L, const Tensor& b);

double chol_logdet(const Tensor& L);  // log det(L L^T)

double gaussian_log_density(const GaussianDist& g, const Tensor& x);

// ----- world construction and sampling -----

// Random well-conditioned world: S = B B^T / D + I/2, A and m standard normal.
GaussianWorld random_world(RngStream& rng, int64_t D, int64_t d, double sigma_z2);

Tensor world_sample_batch(const GaussianWorld& w, RngStream& rng, int64_t n);  // [n,D]

// ----- closed forms along the forward process -----

// p(x_t) = N(sqrt(abar_t) m, abar_t S + (1-abar_t) I); returns its score at x_t.
Tensor marginal_score(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                      const Tensor& x_t);

// Exact minimum-MSE noise estimate: -sqrt(1-abar_t) * marginal_score.
Tensor analytic_denoiser(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                         const Tensor& x_t);

// Gaussian posterior over the clean vector given the noisy one.
GaussianDist posterior_x0_given_xt(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                                   const Tensor& x_t);

// p(z | x_t): observation pushed through the clean-vector posterior.
GaussianDist latent_given_xt(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                             const Tensor& x_t);

// grad_{x_t} log p(z | x_t), the exact counterpart of the learned guidance.
Tensor oracle_guidance(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                       const Tensor& x_t, const Tensor& z);

// Posterior over x0 given an observed latent (no diffusion involved).
GaussianDist conditional_posterior(const GaussianWorld& w, const Tensor& z);

// Score of p(x_t | z) = N(sqrt(abar) mu_c, abar S_c + (1-abar) I) in closed
// form; equals marginal_score + oracle_guidance by Bayes' rule.
Tensor conditional_score(const GaussianWorld& w, const NoiseSchedule& sched, int64_t t,
                         const Tensor& x_t, const Tensor& z);

// ----- guided ancestral sampling in the analytic world -----

// Runs the shared reverse-diffusion loop with the analytic denoiser and exact
// guidance toward z; vectors ride through the loop as [n,1,1,D]. Returns [n,D].
Tensor oracle_guided_samples(const GaussianWorld& w, const NoiseSchedule& sched, const Tensor& z,
                             RngStream& rng, int64_t n, CoefficientRule rule,
                             RunLog* log = nullptr);

}  // namespace sami
