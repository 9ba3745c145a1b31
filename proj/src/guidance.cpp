#include "sami/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <stdexcept>

namespace sami {

// ----- latent constraint selection -----

GuidanceMask GuidanceMask::full(int64_t d) {
  if (d < 1) throw std::runtime_error("mask: latent dimension must be >= 1");
  GuidanceMask m;
  m.active.assign(d, 1);
  return m;
}

int64_t GuidanceMask::count() const {
  int64_t n = 0;
  for (char c : active) n += c ? 1 : 0;
  return n;
}

// ----- posterior likelihood and scores -----

Var log_posterior(const GaussianPosterior& post, const Var& z, const GuidanceMask& mask) {
  const Shape& ms = post.mean.shape();
  if (ms.size() != 2)
    throw std::runtime_error("log_posterior: posterior must be [B,d], got " + shape_str(ms));
  if (post.variance.shape() != ms || z.shape() != ms)
    throw std::runtime_error("log_posterior: mean " + shape_str(ms) + ", variance " +
                             shape_str(post.variance.shape()) + ", z " + shape_str(z.shape()) +
                             " must agree");
  const int64_t d = ms[1];
  if (static_cast<int64_t>(mask.active.size()) != d)
    throw std::runtime_error("log_posterior: mask covers " +
                             std::to_string(mask.active.size()) + " axes, latent has " +
                             std::to_string(d));
  const int64_t k = mask.count();
  if (k == 0) throw std::runtime_error("log_posterior: mask selects no axes");

  Tensor msel = Tensor::zeros({1, d});
  for (int64_t i = 0; i < d; ++i) msel.data[i] = mask.active[i] ? 1.0 : 0.0;

  Var diff = sub(z, post.mean);
  Var term = add(div(square(diff), post.variance), log(post.variance));
  Var masked = mul(term, broadcast_to(constant(msel), term.shape()));
  Var s = sum(masked, {1}, false);  // [B]
  constexpr double kLog2Pi = 1.8378770664093454836;
  return cmul(cadd(s, static_cast<double>(k) * kLog2Pi), -0.5);
}

Var guidance_score_graph(const EncoderParams& enc, const Var& xt_leaf, const Var& z,
                         const GuidanceMask& mask, bool create_graph) {
  if (!xt_leaf.requires_grad())
    throw std::runtime_error("guidance_score: x_t must be a differentiable leaf");
  GaussianPosterior p = encode(enc, xt_leaf);
  Var root = sum(log_posterior(p, z, mask));
  return backward(root, {xt_leaf}, create_graph)[0];
}

Tensor guidance_score(const EncoderParams& enc, const Tensor& x_t, const Tensor& z,
                      const GuidanceMask& mask) {
  if (x_t.rank() != 4)
    throw std::runtime_error("guidance_score: x_t must be [B,1,H,W], got " + shape_str(x_t.shape));
  Tensor z2 = z;
  if (z.rank() == 1) z2 = Tensor({1, z.shape[0]}, z.data);
  if (z2.rank() != 2 || z2.shape[0] != x_t.shape[0])
    throw std::runtime_error("guidance_score: z must be [d] or [B,d] matching the batch");
  Var xt = leaf(x_t);
  return guidance_score_graph(enc, xt, constant(z2), mask, false).val();
}

Tensor conditional_noise_estimate(const Tensor& eps_hat, const Tensor& g, int64_t t,
                                  const NoiseSchedule& sched) {
  if (!same_shape(eps_hat, g))
    throw std::runtime_error("conditional_noise_estimate: eps_hat " + shape_str(eps_hat.shape) +
                             " vs g " + shape_str(g.shape));
  const double gamma = sched.gamma(t);
  Tensor out = eps_hat;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = eps_hat.data[i] - gamma * g.data[i];
  return out;
}

Var kl_to_standard_normal(const GaussianPosterior& post) {
  const Shape& ms = post.mean.shape();
  if (ms.size() != 2 || post.variance.shape() != ms)
    throw std::runtime_error("kl: posterior must be [B,d] with matching variance");
  Var t = cadd(sub(add(square(post.mean), post.variance), log(post.variance)), -1.0);
  return cmul(sum(t, {1}, false), 0.5);  // [B]
}

// ----- training -----

namespace {

double guidance_sign_of(const TrainConfig& cfg) {
  if (cfg.guidance_sign == "positive") return 1.0;
  if (cfg.guidance_sign == "negative") return -1.0;
  throw std::runtime_error("train: unknown guidance_sign '" + cfg.guidance_sign + "'");
}

struct BatchTerms {
  Var recon_sum;  // sum_b lambda_b ||resid_b||^2, undivided
  Var kl_sum;     // sum_b KL_b, undivided
  double norm_eps_sum = 0.0;
  double norm_guidance_sum = 0.0;
};

BatchTerms batch_terms(const DenoiserParams& den, const EncoderParams& enc, const Tensor& x0,
                       const std::vector<int64_t>& t, const Tensor& eps, const Tensor& eps_z,
                       const NoiseSchedule& sched, const TrainConfig& cfg, bool zero_guidance,
                       bool with_encoder = true) {
  const int64_t B = x0.shape[0];
  const int64_t d = enc.cfg.latent_dim;
  Tensor x_t = forward_noise_batch(x0, t, eps, sched);

  Var eps_hat = denoise(den, constant(x_t), t, sched.T);
  Var resid;
  Var kl_sum = constant(Tensor::zeros(Shape{}));  // no posterior -> no KL term
  double norm_g = 0.0;
  if (!with_encoder) {
    resid = sub(constant(eps), eps_hat);  // plain noise matching, encoder untouched
  } else {
    GaussianPosterior p0 = encode(enc, constant(x0));
    kl_sum = sum(kl_to_standard_normal(p0));
    if (zero_guidance) {
      resid = sub(constant(eps), eps_hat);
    } else {
      const double sign = guidance_sign_of(cfg);
      Var z = add(p0.mean, mul(sqrt(p0.variance), constant(eps_z)));
      Var xt_leaf = leaf(x_t);
      Var G = guidance_score_graph(enc, xt_leaf, z, GuidanceMask::full(d), /*create_graph=*/true);
      Tensor gco = Tensor::zeros({B, 1, 1, 1});
      for (int64_t b = 0; b < B; ++b) gco.data[b] = sign * sched.gamma(t[b]);
      Var guided = mul(broadcast_to(constant(gco), G.shape()), G);
      resid = add(sub(constant(eps), eps_hat), guided);
      norm_g = t_mean_row_norm(guided.val()) * static_cast<double>(B);
    }
  }

  Tensor lam = Tensor::zeros({B, 1, 1, 1});
  for (int64_t b = 0; b < B; ++b) lam.data[b] = lambda_weight(cfg.lambda_id, t[b]);
  BatchTerms out;
  out.recon_sum = sum(mul(broadcast_to(constant(lam), resid.shape()), square(resid)));
  out.kl_sum = kl_sum;
  out.norm_eps_sum = t_mean_row_norm(eps_hat.val()) * static_cast<double>(B);
  out.norm_guidance_sum = norm_g;
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx, int64_t lo, int64_t n) {
  Shape s = x.shape;
  s[0] = n;
  Tensor out = Tensor::zeros(s);
  const int64_t per = x.numel() / x.shape[0];
  for (int64_t k = 0; k < n; ++k)
    std::copy(x.data.begin() + idx[lo + k] * per, x.data.begin() + (idx[lo + k] + 1) * per,
              out.data.begin() + k * per);
  return out;
}

Tensor rows_of(const Tensor& x, int64_t lo, int64_t n) {
  Shape s = x.shape;
  s[0] = n;
  Tensor out = Tensor::zeros(s);
  const int64_t per = x.numel() / x.shape[0];
  std::copy(x.data.begin() + lo * per, x.data.begin() + (lo + n) * per, out.data.begin());
  return out;
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.beta_final <= 0.0) throw std::runtime_error("train: beta_final must be > 0");
  if (cfg.beta_anneal != "exponential" && cfg.beta_anneal != "constant")
    throw std::runtime_error("train: unknown beta_anneal '" + cfg.beta_anneal + "'");
  if (cfg.lr <= 0.0) throw std::runtime_error("train: learning rate must be > 0");
  if (cfg.batch < 1) throw std::runtime_error("train: batch size must be >= 1");
  if (cfg.epochs < 1) throw std::runtime_error("train: epochs must be >= 1");
  if (cfg.microbatch < 1) throw std::runtime_error("train: microbatch must be >= 1");
  if (cfg.mode != "joint" && cfg.mode != "frozen-denoiser" && cfg.mode != "denoiser-only")
    throw std::runtime_error("train: unknown mode '" + cfg.mode + "'");
  timestep_dist_from_string(cfg.t_distribution);
  lambda_weight(cfg.lambda_id, 0);
  guidance_sign_of(cfg);
}

}  // namespace

double annealed_beta(const TrainConfig& cfg, int64_t epoch) {
  if (cfg.beta_anneal == "constant") return cfg.beta_final;
  const int64_t span = cfg.anneal_epochs > 0 ? cfg.anneal_epochs : cfg.epochs;
  const double p =
      span <= 1 ? 1.0
                : std::min(1.0, static_cast<double>(epoch) / static_cast<double>(span - 1));
  return cfg.beta_final * std::pow(1e-6, 1.0 - p);
}

SamiLossResult sami_loss(const DenoiserParams& den, const EncoderParams& enc,
                         const Tensor& x0_batch, const NoiseSchedule& sched,
                         const TrainConfig& cfg, double beta_weight, RngStream& rng, int64_t step,
                         bool zero_guidance) {
  if (x0_batch.rank() != 4 || x0_batch.shape[0] < 1)
    throw std::runtime_error("sami_loss: batch must be [B,1,H,W], got " +
                             shape_str(x0_batch.shape));
  const int64_t B = x0_batch.shape[0];
  const TimestepDist td = timestep_dist_from_string(cfg.t_distribution);

  std::vector<int64_t> t;
  Tensor eps;
  draw_levels_and_noise(rng, B, x0_batch.shape, sched, td, t, eps);
  Tensor eps_z = rng.normal_tensor({B, enc.cfg.latent_dim});

  BatchTerms terms = batch_terms(den, enc, x0_batch, t, eps, eps_z, sched, cfg, zero_guidance);
  const double invB = 1.0 / static_cast<double>(B);
  Var recon = cmul(terms.recon_sum, invB);
  Var kl = cmul(terms.kl_sum, invB);
  Var loss = add(recon, cmul(kl, beta_weight));

  RunRecord r;
  r.step = step;
  r.t = std::accumulate(t.begin(), t.end(), 0.0) * invB;
  r.loss = loss.val().scalar();
  r.recon = recon.val().scalar();
  r.kl = kl.val().scalar();
  r.norm_eps = terms.norm_eps_sum * invB;
  r.norm_guidance = terms.norm_guidance_sum * invB;
  return {loss, r};
}

RunLog train(ModelBundle& bundle, const Tensor& x0_all, const TrainConfig& cfg, RngStream& rng) {
  validate_train_config(cfg);
  if (x0_all.rank() != 4 || x0_all.shape[0] < 1)
    throw std::runtime_error("train: dataset must be non-empty [N,1,H,W]");
  if (x0_all.shape[2] != bundle.den.height || x0_all.shape[3] != bundle.den.width)
    throw std::runtime_error("train: dataset image size " + shape_str(x0_all.shape) +
                             " does not match the model");
  const int64_t N = x0_all.shape[0];
  const int64_t d = bundle.enc.cfg.latent_dim;
  const TimestepDist td = timestep_dist_from_string(cfg.t_distribution);
  const bool frozen = cfg.mode == "frozen-denoiser";
  const bool den_only = cfg.mode == "denoiser-only";

  // freeze denoiser graph construction in frozen mode; restore on every exit
  struct FreezeGuard {
    ParamStore& store;
    bool engaged;
    ~FreezeGuard() {
      if (engaged) store.set_requires_grad(true);
    }
  } guard{bundle.den.params, frozen};
  if (frozen) bundle.den.params.set_requires_grad(false);

  std::vector<Var> wrt;
  if (!frozen)
    for (auto& [name, v] : bundle.den.params.items) wrt.push_back(v);
  if (!den_only)
    for (auto& [name, v] : bundle.enc.params.items) wrt.push_back(v);

  std::vector<Tensor> adam_m, adam_v;
  for (const Var& v : wrt) {
    adam_m.push_back(Tensor::zeros(v.shape()));
    adam_v.push_back(Tensor::zeros(v.shape()));
  }
  int64_t adam_t = 0;

  RunLog log;
  int64_t step = 0;
  std::vector<int64_t> idx(N);
  std::iota(idx.begin(), idx.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double beta = annealed_beta(cfg, epoch);
    for (int64_t i = N - 1; i > 0; --i) {  // Fisher-Yates over the epoch order
      int64_t j = static_cast<int64_t>(rng.uniform() * static_cast<double>(i + 1));
      if (j > i) j = i;
      std::swap(idx[i], idx[j]);
    }

    for (int64_t lo = 0; lo < N; lo += cfg.batch) {
      const int64_t B = std::min(cfg.batch, N - lo);
      Tensor x0_batch = gather_rows(x0_all, idx, lo, B);
      std::vector<int64_t> t;
      Tensor eps;
      draw_levels_and_noise(rng, B, x0_batch.shape, bundle.sched, td, t, eps);
      Tensor eps_z = rng.normal_tensor({B, d});

      std::vector<Tensor> grad;
      for (const Var& v : wrt) grad.push_back(Tensor::zeros(v.shape()));
      double recon_sum = 0, kl_sum = 0, ne_sum = 0, ng_sum = 0;

      for (int64_t mlo = 0; mlo < B; mlo += cfg.microbatch) {
        const int64_t m = std::min(cfg.microbatch, B - mlo);
        std::vector<int64_t> t_mb(t.begin() + mlo, t.begin() + mlo + m);
        BatchTerms terms =
            batch_terms(bundle.den, bundle.enc, rows_of(x0_batch, mlo, m), t_mb,
                        rows_of(eps, mlo, m), rows_of(eps_z, mlo, m), bundle.sched, cfg,
                        /*zero_guidance=*/den_only, /*with_encoder=*/!den_only);
        Var root = cmul(add(terms.recon_sum, cmul(terms.kl_sum, beta)),
                        1.0 / static_cast<double>(B));
        std::vector<Var> g = backward(root, wrt);
        for (size_t i = 0; i < wrt.size(); ++i) grad[i] = t_axpy(1.0, g[i].val(), grad[i]);
        recon_sum += terms.recon_sum.val().scalar();
        kl_sum += terms.kl_sum.val().scalar();
        ne_sum += terms.norm_eps_sum;
        ng_sum += terms.norm_guidance_sum;
      }

      const double invB = 1.0 / static_cast<double>(B);
      RunRecord r;
      r.step = step;
      r.t = std::accumulate(t.begin(), t.end(), 0.0) * invB;
      r.recon = recon_sum * invB;
      r.kl = kl_sum * invB;
      r.loss = r.recon + beta * r.kl;
      r.norm_eps = ne_sum * invB;
      r.norm_guidance = ng_sum * invB;
      log.records.push_back(r);
      ++step;

      if (!std::isfinite(r.loss))
        throw std::runtime_error("train: loss diverged at step " + std::to_string(r.step) +
                                 " (recon " + std::to_string(r.recon) + ", kl " +
                                 std::to_string(r.kl) + "); log holds the diagnostic record");

      ++adam_t;
      const double c1 = 1.0 - std::pow(0.9, static_cast<double>(adam_t));
      const double c2 = 1.0 - std::pow(0.999, static_cast<double>(adam_t));
      for (size_t i = 0; i < wrt.size(); ++i) {
        Tensor& th = wrt[i].n->value;
        const Tensor& gg = grad[i];
        Tensor& mm = adam_m[i];
        Tensor& vv = adam_v[i];
        for (int64_t k = 0; k < th.numel(); ++k) {
          mm.data[k] = 0.9 * mm.data[k] + 0.1 * gg.data[k];
          vv.data[k] = 0.999 * vv.data[k] + 0.001 * gg.data[k] * gg.data[k];
          th.data[k] -= cfg.lr * (mm.data[k] / c1) / (std::sqrt(vv.data[k] / c2) + 1e-8);
        }
      }
    }
  }
  return log;
}

// ----- conditional sampling -----

Tensor sample_conditional(const ModelBundle& bundle, const Condition& cond,
                          const GuidanceMask& mask, RngStream& rng, int64_t n,
                          CoefficientRule rule, RunLog* log,
                          const std::optional<ClipWindow>& clip) {
  if (n < 1) throw std::runtime_error("sample_conditional: need n >= 1");
  const int64_t d = bundle.enc.cfg.latent_dim;
  const int64_t H = bundle.den.height, W = bundle.den.width;
  if (static_cast<int64_t>(mask.active.size()) != d)
    throw std::runtime_error("sample_conditional: mask does not cover the latent space");

  Tensor z_all = Tensor::zeros({n, d});
  if (cond.kind == Condition::Kind::image) {
    if (cond.value.shape != Shape{1, 1, H, W})
      throw std::runtime_error("sample_conditional: guidance image must be [1,1," +
                               std::to_string(H) + "," + std::to_string(W) + "]");
    GaussianPosterior p = encode(bundle.enc, constant(cond.value));
    const Tensor mean = p.mean.val(), var = p.variance.val();
    Tensor eps_z = rng.normal_tensor({n, d});  // one z per chain
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < d; ++i)
        z_all.data[j * d + i] = mean.data[i] + std::sqrt(var.data[i]) * eps_z.data[j * d + i];
  } else {
    if (cond.value.shape != Shape{d})
      throw std::runtime_error("sample_conditional: latent condition must be [" +
                               std::to_string(d) + "]");
    for (int64_t j = 0; j < n; ++j)
      std::copy(cond.value.data.begin(), cond.value.data.end(), z_all.data.begin() + j * d);
  }

  EpsFn eps_fn = [&](const Tensor& x, int64_t t) {
    return denoise(bundle.den, constant(x), t, bundle.sched.T).val();
  };
  GuideFn guide_fn = [&](const Tensor& x, int64_t) {
    Var xt = leaf(x);
    return guidance_score_graph(bundle.enc, xt, constant(z_all), mask, false).val();
  };
  Tensor x_init = rng.normal_tensor({n, 1, H, W});
  return sample_loop(eps_fn, &guide_fn, bundle.sched, x_init, rule, rng, log, clip);
}

// ----- run log CSV -----

void write_run_log_csv(const RunLog& log, const std::string& path) {
  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("run log: cannot open '" + tmp + "' for writing");
  std::fputs("step,t,loss,recon,kl,norm_eps,norm_guidance\n", f);
  for (const RunRecord& r : log.records)
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step),
                 r.t, r.loss, r.recon, r.kl, r.norm_eps, r.norm_guidance);
  if (std::fclose(f) != 0) throw std::runtime_error("run log: write to '" + tmp + "' failed");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("run log: cannot move '" + tmp + "' to '" + path + "'");
}

RunLog read_run_log_csv(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("run log: cannot open '" + path + "'");
  std::string text;
  char buf[65536];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);

  RunLog log;
  size_t pos = 0;
  int64_t lineno = 0;
  auto next_line = [&](std::string& out) {
    if (pos >= text.size()) return false;
    const size_t nl = text.find('\n', pos);
    out = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++lineno;
    return true;
  };
  std::string line;
  if (!next_line(line) || line != "step,t,loss,recon,kl,norm_eps,norm_guidance")
    throw std::runtime_error("run log: '" + path + "' has an unexpected header");
  while (next_line(line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    const char* p = line.c_str();
    char* end = nullptr;
    for (int i = 0; i < 7; ++i) {
      vals.push_back(std::strtod(p, &end));
      if (end == p)
        throw std::runtime_error("run log: parse error at line " + std::to_string(lineno));
      p = end;
      if (i < 6) {
        if (*p != ',')
          throw std::runtime_error("run log: expected comma at line " + std::to_string(lineno));
        ++p;
      }
    }
    if (*p != '\0')
      throw std::runtime_error("run log: trailing characters at line " + std::to_string(lineno));
    RunRecord r;
    r.step = static_cast<int64_t>(vals[0]);
    r.t = vals[1];
    r.loss = vals[2];
    r.recon = vals[3];
    r.kl = vals[4];
    r.norm_eps = vals[5];
    r.norm_guidance = vals[6];
    log.records.push_back(r);
  }
  return log;
}

}  // namespace sami
