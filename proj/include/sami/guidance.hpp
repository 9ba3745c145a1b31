#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sami/diffusion.hpp"
#include "sami/networks.hpp"
#include "sami/runlog.hpp"

namespace sami {

// ----- latent constraint selection -----

struct GuidanceMask {
  std::vector<char> active;  // per latent axis; at least one must be set
  static GuidanceMask full(int64_t d);
  int64_t count() const;
};

// ----- posterior likelihood and scores -----

// Batched diagonal-Gaussian log density restricted to the active axes:
// -1/2 [ sum_active ((z_i-mu_i)^2/var_i + log var_i) + |active| log 2pi ].
// post.mean/variance and z are [B, d]; returns [B]. Empty mask errors.
Var log_posterior(const GaussianPosterior& post, const Var& z, const GuidanceMask& mask);

// d/dx_t of log_posterior(encode(x_t), z): xt must be a leaf; returns the
// image-shaped score, one per example. With create_graph the result stays
// differentiable with respect to the encoder parameters (and z).
Var guidance_score_graph(const EncoderParams& enc, const Var& xt_leaf, const Var& z,
                         const GuidanceMask& mask, bool create_graph);

// Value-only convenience for sampling-time guidance.
Tensor guidance_score(const EncoderParams& enc, const Tensor& x_t, const Tensor& z,
                      const GuidanceMask& mask);

// eps_hat - sqrt(1 - alpha_bar[t]) * g, applied exactly in that form.
Tensor conditional_noise_estimate(const Tensor& eps_hat, const Tensor& g, int64_t t,
                                  const NoiseSchedule& sched);

// KL(q || N(0,I)) per example: 1/2 sum_i (mu_i^2 + var_i - 1 - log var_i); [B].
Var kl_to_standard_normal(const GaussianPosterior& post);

// ----- training -----

struct TrainConfig {
  double beta_final = 5e-6;
  std::string beta_anneal = "exponential";  // or "constant"
  int64_t anneal_epochs = 0;                // 0 -> anneal across all epochs
  double lr = 6e-3;
  int64_t batch = 512;
  int64_t epochs = 1000;
  std::string t_distribution = "uniform";
  std::string mode = "joint";  // "frozen-denoiser": encoder only; "denoiser-only": noise matching, no encoder
  std::string lambda_id = "one";
  std::string guidance_sign = "positive";  // "+gamma g" in the residual; "negative" flips it
  int64_t microbatch = 64;                 // graph-size cap; draws are per logical batch
};

double annealed_beta(const TrainConfig& cfg, int64_t epoch);  // KL weight at a given epoch

struct SamiLossResult {
  Var loss;
  RunRecord record;
};

// One full-batch objective evaluation. Draw order: levels, image noise, then
// latent noise, so the first two match ddpm_loss on the same stream. With
// zero_guidance the score term is skipped entirely (the residual reduces to
// eps - eps_hat); beta_weight scales the KL term.
SamiLossResult sami_loss(const DenoiserParams& den, const EncoderParams& enc,
                         const Tensor& x0_batch, const NoiseSchedule& sched,
                         const TrainConfig& cfg, double beta_weight, RngStream& rng, int64_t step,
                         bool zero_guidance = false);

struct ModelBundle {
  DenoiserParams den;
  EncoderParams enc;
  NoiseSchedule sched;
  ModelConfig model_cfg;
};

// Adam (0.9, 0.999, 1e-8), no weight decay; per-epoch shuffle; exponential KL
// anneal from beta_final*1e-6; one record per logical batch step; microbatched
// gradient accumulation in fixed order. Frozen-denoiser mode updates only the
// encoder and leaves denoiser bits untouched; denoiser-only mode trains pure
// noise matching (no score term, no KL) and leaves encoder bits untouched.
// Non-finite loss appends a diagnostic record and throws.
RunLog train(ModelBundle& bundle, const Tensor& x0_all, const TrainConfig& cfg, RngStream& rng);

// ----- conditional sampling -----

struct Condition {
  enum class Kind { image, latent } kind = Kind::image;
  Tensor value;  // image: [1,1,H,W]; latent: [d]
};

// Draw order: per-chain z (image conditions only), then x_init, then the loop
// noise. A latent condition is shared by every chain. The clip window (see
// sample_loop) stabilizes long chains; guidance is added after the clipped
// mean so the score decomposition is untouched.
Tensor sample_conditional(const ModelBundle& bundle, const Condition& cond,
                          const GuidanceMask& mask, RngStream& rng, int64_t n,
                          CoefficientRule rule, RunLog* log = nullptr,
                          const std::optional<ClipWindow>& clip = std::nullopt);

}  // namespace sami
