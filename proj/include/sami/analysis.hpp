// Representation diagnostics: sample variability, latent traversals,
// posterior-variance profiles over noise levels, per-axis coherence of the
// latent code, participation ratio, trajectory straightness, score-magnitude
// curves from sampling logs, Hutchinson smoothness probes, and factor-axis
// alignment. Every metric is a pure function of its inputs; randomized ones
// take an explicit stream and document their draw order.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sami/diffusion.hpp"
#include "sami/networks.hpp"
#include "sami/rng.hpp"
#include "sami/runlog.hpp"
#include "sami/schedule.hpp"
#include "sami/tensor.hpp"

namespace sami {

// ----- scalar spread metrics -----

// Mean squared distance from the empirical mean, normalized per element:
// (1/N) sum_i ||x_i - xbar||^2 / D for samples [N,...]. Needs N >= 2.
double variability(const Tensor& samples);

// sqrt((sum w^2)^2 / sum w^4): 1 for a one-hot vector, sqrt(d) for a uniform
// one. Zero vectors are rejected.
double participation_ratio(const Tensor& w);

// ----- latent-space geometry -----

// Evenly spaced convex combinations of two latents, endpoints included;
// returns [steps, d], steps >= 2.
Tensor latent_traverse(const Tensor& z_a, const Tensor& z_b, int64_t steps);

struct StraightnessReport {
  std::vector<double> cosines;  // one per interior point
  double mean = 0.0;
};

// Cosine similarity of consecutive difference vectors over points [n,k],
// n >= 3. A zero difference is an error naming the offending frame pair.
StraightnessReport straightness(const Tensor& points);

// ----- encoder posterior statistics -----

// Rows follow `levels` (strictly ascending, in range). Entry [l,i] is the
// average of sigma_i^2 over all images and k noise draws at that level;
// level 0 uses the clean images directly and draws nothing. Draw order:
// levels in order, k full-batch noise tensors each.
Tensor posterior_variance_profile(const EncoderParams& enc, const Tensor& x0,
                                  const NoiseSchedule& sched, const std::vector<int64_t>& levels,
                                  RngStream& rng, int64_t k = 8);

struct AxisReport {
  Tensor pop_var_mu;  // [d] population variance (1/N) of clean-image posterior means
  Tensor mean_var;    // [d] mean posterior variance at the reference noise level
  Tensor sens_norm;   // [d] mean L2 norm of grad_{x_t} sigma_i^2
  Tensor coherence;   // [d] mean_var / ((pop_var_mu + eps) * (sens_norm + eps)), eps = 1e-8
};

// Needs >= 50 images [N,1,H,W]; draws one noise tensor for the whole batch.
AxisReport global_coherence(const EncoderParams& enc, const Tensor& images, int64_t t_ref,
                            const NoiseSchedule& sched, RngStream& rng);

// ----- sampling-run curves -----

struct ScoreProfile {
  std::vector<int64_t> step;
  std::vector<double> t, eps_norm, guidance_norm, difference;  // difference = eps - guidance
};

ScoreProfile score_magnitude_profile(const RunLog& log);  // empty log is an error

// ----- smoothness probes -----

struct SmoothnessReport {
  double jacobian_energy = 0.0;  // E_v ||(dmu/dx)^T v||^2
  double hessian_energy = 0.0;   // E_{v,u} ||grad_x(grad_x(v.mu) . u)||^2
};

// mu maps one image [1,1,H,W] to a latent mean [1,d] as a differentiable
// graph. Per image and probe the draw order is v [1,d] then u image-shaped;
// the Hessian term goes through a second backward pass.
using MeanFn = std::function<Var(const Var&)>;
SmoothnessReport smoothness_probe_fn(const MeanFn& mu, const Tensor& images, int64_t d,
                                     int64_t n_probes, RngStream& rng);
SmoothnessReport smoothness_probe(const EncoderParams& enc, const Tensor& images,
                                  int64_t n_probes, RngStream& rng);

// ----- factor alignment -----

struct AlignmentReport {
  Tensor r2;                      // [F,d] univariate ordinary-least-squares R^2
  std::vector<int64_t> best_axis; // argmax axis per factor
  std::vector<double> best_r2;
  bool distinct_axes = false;     // best axes pairwise distinct
};

// latents [N,d], factors [N,F], N >= 100. A constant axis or factor scores
// R^2 = 0 rather than erroring.
AlignmentReport factor_alignment(const Tensor& latents, const Tensor& factors);

// Spearman rank correlation with average ranks for ties; a zero-variance
// input yields 0.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// ----- csv export -----

void write_matrix_csv(const Tensor& m, const std::vector<std::string>& cols,
                      const std::string& path);
void write_score_profile_csv(const ScoreProfile& p, const std::string& path);

}  // namespace sami
