#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "sami/autodiff.hpp"
#include "sami/networks.hpp"
#include "sami/runlog.hpp"
#include "sami/schedule.hpp"

namespace sami {

// ----- variance-preserving forward process -----

// x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps. The caller
// supplies eps so draws stay under its control.
Tensor forward_noise(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched);

// Row-by-row forward noise with one level per example; x0, eps: [B, ...].
Tensor forward_noise_batch(const Tensor& x0, const std::vector<int64_t>& t, const Tensor& eps,
                           const NoiseSchedule& sched);

// Optional sampling stabilizer: the denoised estimate
// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t) is clipped to
// [lo, hi] before the posterior mean is formed. Algebraically a no-op
// whenever x0_hat already lies inside the window, so a well-trained model is
// unaffected; an imperfect one cannot compound its per-step error into a
// runaway state. Image pipelines pass the pixel window; closed-form
// (unbounded-support) worlds must not clip.
struct ClipWindow {
  double lo = 0.0;
  double hi = 1.0;
};

// Unconditional reverse mean (1/sqrt(alpha_t)) (x_t - beta_t/sqrt(1-alpha_bar_t) eps_hat),
// or the x0-parameterized equivalent when a clip window is given.
// Transitions go level t -> t-1, so t = 0 is an error.
Tensor ddpm_transition_mean(const Tensor& x_t, int64_t t, const Tensor& eps_hat,
                            const NoiseSchedule& sched,
                            const std::optional<ClipWindow>& clip = std::nullopt);

// ----- ancestral sampling -----

// Batched callbacks: [n,1,H,W] at a shared level -> [n,1,H,W].
using EpsFn = std::function<Tensor(const Tensor& x_t, int64_t t)>;
using GuideFn = std::function<Tensor(const Tensor& x_t, int64_t t)>;

// Guided-mean coefficient selection: "derived" uses beta_t/sqrt(alpha_t)
// (consistent with the conditional noise estimate pushed through the
// transition mean), "algorithm" uses sqrt(1-alpha_t).
enum class CoefficientRule { derived, algorithm };
CoefficientRule coefficient_rule_from_string(const std::string& id);  // errors on unknown id
std::string coefficient_rule_to_string(CoefficientRule rule);
double guided_mean_coefficient(CoefficientRule rule, const NoiseSchedule& sched, int64_t t);

// One full reverse pass from x_init (treated as level T-1 noise). For each
// t = T-1 .. 1: mean = ddpm_transition_mean(x, t, eps_fn(x,t)), plus
// coefficient(rule, t) * guide_fn(x,t) when a guide is given; transition noise
// std sqrt(beta_t) except none at the final step. Appends one record per step
// to log when given (loss fields zero; norms are per-example batch means,
// norm_guidance uses gamma_t * g).
Tensor sample_loop(const EpsFn& eps_fn, const GuideFn* guide_fn, const NoiseSchedule& sched,
                   const Tensor& x_init, CoefficientRule rule, RngStream& rng,
                   RunLog* log = nullptr, const std::optional<ClipWindow>& clip = std::nullopt);

// Draws x_init ~ N(0,I) for n chains and runs the unguided loop.
Tensor sample_unconditional(const DenoiserParams& den, const NoiseSchedule& sched, RngStream& rng,
                            int64_t n, RunLog* log = nullptr,
                            const std::optional<ClipWindow>& clip = std::nullopt);

// ----- plain DDPM objective -----

// Draw order per call: levels t[0..B), then the noise tensor. Returns the
// batch mean of the per-example squared residual norm as a differentiable
// scalar. Identity level weighting ("one") is the only implemented id.
Var ddpm_loss(const DenoiserParams& den, const Tensor& x0_batch, const NoiseSchedule& sched,
              RngStream& rng, TimestepDist tdist, const std::string& lambda_id = "one");

// Same objective with an injectable batched estimator (one level per example).
using EpsBatchFn = std::function<Var(const Tensor& x_t, const std::vector<int64_t>& t)>;
Var ddpm_loss_core(const EpsBatchFn& eps_fn, const Tensor& x0_batch, const NoiseSchedule& sched,
                   RngStream& rng, TimestepDist tdist, const std::string& lambda_id = "one");

// Shared draw helper so objectives built on the same stream see identical
// (t, eps) sequences.
void draw_levels_and_noise(RngStream& rng, int64_t B, const Shape& image_shape,
                           const NoiseSchedule& sched, TimestepDist tdist,
                           std::vector<int64_t>& t_out, Tensor& eps_out);

double lambda_weight(const std::string& lambda_id, int64_t t);  // "one" -> 1.0

}  // namespace sami
