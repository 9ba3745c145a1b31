#include "sami/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sami {

Tensor forward_noise(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_level(t);
  if (!same_shape(x0, eps))
    throw std::runtime_error("forward_noise: x0 " + shape_str(x0.shape) + " vs eps " +
                             shape_str(eps.shape));
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out = x0;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

Tensor forward_noise_batch(const Tensor& x0, const std::vector<int64_t>& t, const Tensor& eps,
                           const NoiseSchedule& sched) {
  if (!same_shape(x0, eps))
    throw std::runtime_error("forward_noise_batch: x0 " + shape_str(x0.shape) + " vs eps " +
                             shape_str(eps.shape));
  const int64_t B = x0.shape[0];
  if (t.size() != static_cast<size_t>(B))
    throw std::runtime_error("forward_noise_batch: need one level per example");
  Tensor x_t = Tensor::zeros(x0.shape);
  const int64_t per = x0.numel() / B;
  for (int64_t b = 0; b < B; ++b) {
    sched.check_level(t[b]);
    const double a = std::sqrt(sched.alpha_bar[t[b]]);
    const double c = std::sqrt(1.0 - sched.alpha_bar[t[b]]);
    for (int64_t i = b * per; i < (b + 1) * per; ++i)
      x_t.data[i] = a * x0.data[i] + c * eps.data[i];
  }
  return x_t;
}

Tensor ddpm_transition_mean(const Tensor& x_t, int64_t t, const Tensor& eps_hat,
                            const NoiseSchedule& sched, const std::optional<ClipWindow>& clip) {
  sched.check_level(t);
  if (t == 0) throw std::runtime_error("ddpm_transition_mean: no transition below level 0");
  if (!same_shape(x_t, eps_hat))
    throw std::runtime_error("ddpm_transition_mean: x_t " + shape_str(x_t.shape) +
                             " vs eps_hat " + shape_str(eps_hat.shape));
  if (clip) {
    if (!(clip->lo < clip->hi))
      throw std::runtime_error("ddpm_transition_mean: clip window is empty");
    // same mean written in the denoised-estimate parameterization, with
    // x0_hat projected onto the window before it re-enters the mixture
    const double abar = sched.alpha_bar[t];
    const double abar_prev = sched.alpha_bar[t - 1];
    const double c0 = std::sqrt(abar_prev) * sched.beta[t] / (1.0 - abar);
    const double cx = std::sqrt(sched.alpha[t]) * (1.0 - abar_prev) / (1.0 - abar);
    const double inv_sqrt_abar = 1.0 / std::sqrt(abar);
    const double noise_scale = std::sqrt(1.0 - abar);
    Tensor out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i) {
      const double x0 = inv_sqrt_abar * (x_t.data[i] - noise_scale * eps_hat.data[i]);
      out.data[i] = c0 * std::clamp(x0, clip->lo, clip->hi) + cx * x_t.data[i];
    }
    return out;
  }
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out = x_t;
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[i] = inv_sqrt_alpha * (x_t.data[i] - coef * eps_hat.data[i]);
  return out;
}

// ----- ancestral sampling -----

CoefficientRule coefficient_rule_from_string(const std::string& id) {
  if (id == "derived") return CoefficientRule::derived;
  if (id == "algorithm") return CoefficientRule::algorithm;
  throw std::runtime_error("coefficient_rule: unknown id '" + id + "'");
}

std::string coefficient_rule_to_string(CoefficientRule rule) {
  return rule == CoefficientRule::derived ? "derived" : "algorithm";
}

double guided_mean_coefficient(CoefficientRule rule, const NoiseSchedule& sched, int64_t t) {
  sched.check_level(t);
  if (rule == CoefficientRule::derived) return sched.beta[t] / std::sqrt(sched.alpha[t]);
  return std::sqrt(1.0 - sched.alpha[t]);
}

Tensor sample_loop(const EpsFn& eps_fn, const GuideFn* guide_fn, const NoiseSchedule& sched,
                   const Tensor& x_init, CoefficientRule rule, RngStream& rng, RunLog* log,
                   const std::optional<ClipWindow>& clip) {
  if (sched.T < 2) throw std::runtime_error("sample_loop: schedule has fewer than 2 levels");
  Tensor x = x_init;
  int64_t step = 0;
  for (int64_t t = sched.T - 1; t >= 1; --t, ++step) {
    Tensor eps_hat = eps_fn(x, t);
    Tensor mean = ddpm_transition_mean(x, t, eps_hat, sched, clip);
    double g_norm = 0.0;
    if (guide_fn) {
      Tensor g = (*guide_fn)(x, t);
      if (!same_shape(g, x))
        throw std::runtime_error("sample_loop: guidance shape " + shape_str(g.shape) +
                                 " vs state " + shape_str(x.shape));
      const double c = guided_mean_coefficient(rule, sched, t);
      for (int64_t i = 0; i < mean.numel(); ++i) mean.data[i] += c * g.data[i];
      g_norm = t_mean_row_norm(g, sched.gamma(t));
    }
    if (t > 1) {
      const double std = std::sqrt(sched.beta[t]);
      Tensor noise = rng.normal_tensor(x.shape);
      for (int64_t i = 0; i < mean.numel(); ++i) mean.data[i] += std * noise.data[i];
    }
    x = std::move(mean);
    if (log) {
      RunRecord r;
      r.step = step;
      r.t = static_cast<double>(t);
      r.norm_eps = t_mean_row_norm(eps_hat);
      r.norm_guidance = g_norm;
      log->records.push_back(r);
    }
  }
  return x;
}

Tensor sample_unconditional(const DenoiserParams& den, const NoiseSchedule& sched, RngStream& rng,
                            int64_t n, RunLog* log, const std::optional<ClipWindow>& clip) {
  if (n < 1) throw std::runtime_error("sample_unconditional: need n >= 1");
  Tensor x0 = rng.normal_tensor({n, 1, den.height, den.width});
  EpsFn eps_fn = [&](const Tensor& x, int64_t t) {
    return denoise(den, constant(x), t, sched.T).val();
  };
  return sample_loop(eps_fn, nullptr, sched, x0, CoefficientRule::derived, rng, log, clip);
}

// ----- plain DDPM objective -----

double lambda_weight(const std::string& lambda_id, int64_t) {
  if (lambda_id == "one") return 1.0;
  throw std::runtime_error("lambda_weight: unknown id '" + lambda_id + "'");
}

void draw_levels_and_noise(RngStream& rng, int64_t B, const Shape& image_shape,
                           const NoiseSchedule& sched, TimestepDist tdist,
                           std::vector<int64_t>& t_out, Tensor& eps_out) {
  t_out.resize(B);
  for (int64_t b = 0; b < B; ++b) t_out[b] = sample_timestep(rng, sched.T, tdist);
  Shape full = image_shape;
  full[0] = B;
  eps_out = rng.normal_tensor(full);
}

Var ddpm_loss_core(const EpsBatchFn& eps_fn, const Tensor& x0_batch, const NoiseSchedule& sched,
                   RngStream& rng, TimestepDist tdist, const std::string& lambda_id) {
  if (x0_batch.rank() != 4 || x0_batch.shape[0] < 1)
    throw std::runtime_error("ddpm_loss: batch must be [B,1,H,W], got " +
                             shape_str(x0_batch.shape));
  const int64_t B = x0_batch.shape[0];
  std::vector<int64_t> t;
  Tensor eps;
  draw_levels_and_noise(rng, B, x0_batch.shape, sched, tdist, t, eps);

  Tensor x_t = forward_noise_batch(x0_batch, t, eps, sched);
  Var eps_hat = eps_fn(x_t, t);
  Var resid = sub(constant(eps), eps_hat);
  Tensor lam = Tensor::zeros({B, 1, 1, 1});
  for (int64_t b = 0; b < B; ++b) lam.data[b] = lambda_weight(lambda_id, t[b]);
  Var weighted = mul(broadcast_to(constant(lam), resid.shape()), square(resid));
  return cmul(sum(weighted), 1.0 / static_cast<double>(B));
}

Var ddpm_loss(const DenoiserParams& den, const Tensor& x0_batch, const NoiseSchedule& sched,
              RngStream& rng, TimestepDist tdist, const std::string& lambda_id) {
  EpsBatchFn fn = [&](const Tensor& x_t, const std::vector<int64_t>& t) {
    return denoise(den, constant(x_t), t, sched.T);
  };
  return ddpm_loss_core(fn, x0_batch, sched, rng, tdist, lambda_id);
}

}  // namespace sami
