#include "sami/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sami/autodiff.hpp"

namespace sami {

namespace {

// ----- shape helpers -----

void check_batch_of_images(const Tensor& x, const char* what) {
  if (x.shape.size() != 4 || x.shape[1] != 1)
    throw std::invalid_argument(std::string(what) + " must have shape [N,1,H,W], got " +
                                shape_str(x.shape));
  if (x.shape[0] < 1) throw std::invalid_argument(std::string(what) + " must be non-empty");
}

Tensor image_row(const Tensor& x, int64_t i) {
  const int64_t hw = x.shape[2] * x.shape[3];
  Tensor out = Tensor::zeros({1, 1, x.shape[2], x.shape[3]});
  std::copy(x.data.begin() + i * hw, x.data.begin() + (i + 1) * hw, out.data.begin());
  return out;
}

void write_text_file(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
  const bool ok = std::fwrite(body.data(), 1, body.size(), f) == body.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write to " + tmp);
  std::filesystem::rename(tmp, path);
}

void append_g17(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

// ----- scalar spread metrics -----

double variability(const Tensor& samples) {
  if (samples.shape.empty() || samples.shape[0] < 2)
    throw std::invalid_argument("variability needs at least 2 samples, got shape " +
                                shape_str(samples.shape));
  const int64_t n = samples.shape[0];
  const int64_t d = samples.numel() / n;
  std::vector<double> mean(d, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) mean[j] += samples.data[i * d + j];
  for (double& m : mean) m /= (double)n;
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) {
      const double r = samples.data[i * d + j] - mean[j];
      acc += r * r;
    }
  return acc / ((double)n * (double)d);
}

double participation_ratio(const Tensor& w) {
  double s2 = 0.0, s4 = 0.0;
  for (double v : w.data) {
    const double q = v * v;
    s2 += q;
    s4 += q * q;
  }
  if (s2 == 0.0) throw std::invalid_argument("participation_ratio of an all-zero vector");
  return std::sqrt(s2 * s2 / s4);
}

// ----- latent-space geometry -----

Tensor latent_traverse(const Tensor& z_a, const Tensor& z_b, int64_t steps) {
  if (z_a.shape != z_b.shape)
    throw std::invalid_argument("latent_traverse endpoints differ in shape: " +
                                shape_str(z_a.shape) + " vs " + shape_str(z_b.shape));
  if (z_a.shape.size() != 1)
    throw std::invalid_argument("latent_traverse expects rank-1 latents, got " +
                                shape_str(z_a.shape));
  if (steps < 2) throw std::invalid_argument("latent_traverse needs steps >= 2");
  const int64_t d = z_a.shape[0];
  Tensor out = Tensor::zeros({steps, d});
  for (int64_t s = 0; s < steps; ++s) {
    const double w = (double)s / (double)(steps - 1);
    for (int64_t j = 0; j < d; ++j)
      out.data[s * d + j] = (1.0 - w) * z_a.data[j] + w * z_b.data[j];
  }
  return out;
}

StraightnessReport straightness(const Tensor& points) {
  if (points.shape.size() != 2)
    throw std::invalid_argument("straightness expects points [n,k], got " +
                                shape_str(points.shape));
  const int64_t n = points.shape[0], k = points.shape[1];
  if (n < 3) throw std::invalid_argument("straightness needs at least 3 points");
  std::vector<std::vector<double>> diff(n - 1, std::vector<double>(k));
  std::vector<double> norm(n - 1);
  for (int64_t t = 0; t + 1 < n; ++t) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double d = points.data[(t + 1) * k + j] - points.data[t * k + j];
      diff[t][j] = d;
      s += d * d;
    }
    norm[t] = std::sqrt(s);
    if (norm[t] == 0.0)
      throw std::invalid_argument("straightness: frames " + std::to_string(t) + " and " +
                                  std::to_string(t + 1) + " coincide");
  }
  StraightnessReport rep;
  double acc = 0.0;
  for (int64_t t = 0; t + 2 < n; ++t) {
    double dot = 0.0;
    for (int64_t j = 0; j < k; ++j) dot += diff[t][j] * diff[t + 1][j];
    const double c = dot / (norm[t] * norm[t + 1]);
    rep.cosines.push_back(c);
    acc += c;
  }
  rep.mean = acc / (double)rep.cosines.size();
  return rep;
}

// ----- encoder posterior statistics -----

Tensor posterior_variance_profile(const EncoderParams& enc, const Tensor& x0,
                                  const NoiseSchedule& sched, const std::vector<int64_t>& levels,
                                  RngStream& rng, int64_t k) {
  check_batch_of_images(x0, "posterior_variance_profile images");
  if (levels.empty()) throw std::invalid_argument("posterior_variance_profile needs levels");
  for (size_t i = 0; i < levels.size(); ++i) {
    sched.check_level(levels[i]);
    if (i > 0 && levels[i] <= levels[i - 1])
      throw std::invalid_argument("levels must be strictly ascending");
  }
  if (k < 1) throw std::invalid_argument("posterior_variance_profile needs k >= 1 draws");
  const int64_t n = x0.shape[0];
  const int64_t d = enc.cfg.latent_dim;
  Tensor out = Tensor::zeros({(int64_t)levels.size(), d});
  for (size_t li = 0; li < levels.size(); ++li) {
    const int64_t t = levels[li];
    std::vector<double> acc(d, 0.0);
    int64_t count = 0;
    const int64_t draws = t == 0 ? 1 : k;  // level 0 is deterministic in x0
    for (int64_t j = 0; j < draws; ++j) {
      Tensor x_t = x0;
      if (t != 0) {
        const Tensor eps = rng.normal_tensor(x0.shape);
        x_t = forward_noise(x0, t, eps, sched);
      }
      const GaussianPosterior post = encode(enc, constant(x_t));
      const Tensor& var = post.variance.val();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t a = 0; a < d; ++a) acc[a] += var.data[i * d + a];
      count += n;
    }
    for (int64_t a = 0; a < d; ++a) out.data[(int64_t)li * d + a] = acc[a] / (double)count;
  }
  return out;
}

AxisReport global_coherence(const EncoderParams& enc, const Tensor& images, int64_t t_ref,
                            const NoiseSchedule& sched, RngStream& rng) {
  check_batch_of_images(images, "global_coherence images");
  const int64_t n = images.shape[0];
  if (n < 50)
    throw std::invalid_argument("global_coherence needs at least 50 images, got " +
                                std::to_string(n));
  sched.check_level(t_ref);
  const int64_t d = enc.cfg.latent_dim;
  const double eps = 1e-8;

  // a: population variance of clean-image posterior means.
  const GaussianPosterior clean = encode(enc, constant(images));
  const Tensor& mu = clean.mean.val();
  Tensor a = Tensor::zeros({d});
  {
    std::vector<double> mbar(d, 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) mbar[j] += mu.data[i * d + j];
    for (double& v : mbar) v /= (double)n;
    for (int64_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double r = mu.data[i * d + j] - mbar[j];
        s += r * r;
      }
      a.data[j] = s / (double)n;
    }
  }

  const Tensor noise = rng.normal_tensor(images.shape);
  const Tensor x_ref =
      t_ref == 0 ? images : forward_noise(images, t_ref, noise, sched);

  // b: mean posterior variance at the reference level (one batched encode).
  Tensor b = Tensor::zeros({d});
  {
    const GaussianPosterior post = encode(enc, constant(x_ref));
    const Tensor& var = post.variance.val();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) b.data[j] += var.data[i * d + j];
    for (int64_t j = 0; j < d; ++j) b.data[j] /= (double)n;
  }

  // c: mean input-gradient norm of each variance head, one image at a time.
  Tensor c = Tensor::zeros({d});
  for (int64_t i = 0; i < n; ++i) {
    const Var x_leaf = leaf(image_row(x_ref, i));
    const GaussianPosterior post = encode(enc, x_leaf);
    for (int64_t j = 0; j < d; ++j) {
      const Var root = sum(slice(post.variance, {0, j}, {1, j + 1}));
      const Tensor g = backward(root, {x_leaf})[0].val();
      c.data[j] += t_norm2(g);
    }
  }
  for (int64_t j = 0; j < d; ++j) c.data[j] /= (double)n;

  AxisReport rep;
  rep.pop_var_mu = a;
  rep.mean_var = b;
  rep.sens_norm = c;
  rep.coherence = Tensor::zeros({d});
  for (int64_t j = 0; j < d; ++j)
    rep.coherence.data[j] = b.data[j] / ((a.data[j] + eps) * (c.data[j] + eps));
  return rep;
}

// ----- sampling-run curves -----

ScoreProfile score_magnitude_profile(const RunLog& log) {
  if (log.records.empty())
    throw std::invalid_argument("score_magnitude_profile on an empty run log");
  ScoreProfile p;
  for (const RunRecord& r : log.records) {
    p.step.push_back(r.step);
    p.t.push_back(r.t);
    p.eps_norm.push_back(r.norm_eps);
    p.guidance_norm.push_back(r.norm_guidance);
    p.difference.push_back(r.norm_eps - r.norm_guidance);
  }
  return p;
}

// ----- smoothness probes -----

SmoothnessReport smoothness_probe_fn(const MeanFn& mu, const Tensor& images, int64_t d,
                                     int64_t n_probes, RngStream& rng) {
  check_batch_of_images(images, "smoothness_probe images");
  if (n_probes < 1) throw std::invalid_argument("smoothness_probe needs n_probes >= 1");
  if (d < 1) throw std::invalid_argument("smoothness_probe needs latent dim >= 1");
  const int64_t n = images.shape[0];
  double jac = 0.0, hess = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const Var x_leaf = leaf(image_row(images, i));
    const Var m = mu(x_leaf);
    if (m.shape().size() != 2 || m.shape()[0] != 1 || m.shape()[1] != d)
      throw std::invalid_argument("smoothness_probe mean map must return [1," +
                                  std::to_string(d) + "], got " + shape_str(m.shape()));
    for (int64_t p = 0; p < n_probes; ++p) {
      const Tensor v = rng.normal_tensor({1, d});
      const Tensor u = rng.normal_tensor(x_leaf.shape());
      const Var s = sum(mul(m, constant(v)));
      const Var g = backward(s, {x_leaf}, /*create_graph=*/true)[0];
      jac += t_dot(g.val(), g.val());
      const Var h = backward(sum(mul(g, constant(u))), {x_leaf})[0];
      hess += t_dot(h.val(), h.val());
    }
  }
  const double denom = (double)n * (double)n_probes;
  return SmoothnessReport{jac / denom, hess / denom};
}

SmoothnessReport smoothness_probe(const EncoderParams& enc, const Tensor& images,
                                  int64_t n_probes, RngStream& rng) {
  const MeanFn mu = [&enc](const Var& x) { return encode(enc, x).mean; };
  return smoothness_probe_fn(mu, images, enc.cfg.latent_dim, n_probes, rng);
}

// ----- factor alignment -----

AlignmentReport factor_alignment(const Tensor& latents, const Tensor& factors) {
  if (latents.shape.size() != 2 || factors.shape.size() != 2)
    throw std::invalid_argument("factor_alignment expects latents [N,d] and factors [N,F]");
  if (latents.shape[0] != factors.shape[0])
    throw std::invalid_argument("factor_alignment row mismatch: " + shape_str(latents.shape) +
                                " vs " + shape_str(factors.shape));
  const int64_t n = latents.shape[0], d = latents.shape[1], f = factors.shape[1];
  if (n < 100)
    throw std::invalid_argument("factor_alignment needs at least 100 rows, got " +
                                std::to_string(n));

  const auto column_stats = [n](const Tensor& m, int64_t cols, int64_t j,
                                std::vector<double>& centered) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += m.data[i * cols + j];
    mean /= (double)n;
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      centered[i] = m.data[i * cols + j] - mean;
      var += centered[i] * centered[i];
    }
    return var;
  };

  std::vector<std::vector<double>> lat(d, std::vector<double>(n));
  std::vector<double> lat_var(d);
  for (int64_t j = 0; j < d; ++j) lat_var[j] = column_stats(latents, d, j, lat[j]);

  AlignmentReport rep;
  rep.r2 = Tensor::zeros({f, d});
  std::vector<double> fac(n);
  for (int64_t q = 0; q < f; ++q) {
    const double fac_var = column_stats(factors, f, q, fac);
    for (int64_t j = 0; j < d; ++j) {
      if (fac_var == 0.0 || lat_var[j] == 0.0) continue;  // constant column scores 0
      double cov = 0.0;
      for (int64_t i = 0; i < n; ++i) cov += fac[i] * lat[j][i];
      const double r2 = cov * cov / (fac_var * lat_var[j]);
      rep.r2.data[q * d + j] = std::min(1.0, std::max(0.0, r2));
    }
  }
  for (int64_t q = 0; q < f; ++q) {
    int64_t best = 0;
    for (int64_t j = 1; j < d; ++j)
      if (rep.r2.data[q * d + j] > rep.r2.data[q * d + best]) best = j;
    rep.best_axis.push_back(best);
    rep.best_r2.push_back(rep.r2.data[q * d + best]);
  }
  rep.distinct_axes = true;
  for (size_t x = 0; x < rep.best_axis.size(); ++x)
    for (size_t y = x + 1; y < rep.best_axis.size(); ++y)
      if (rep.best_axis[x] == rep.best_axis[y]) rep.distinct_axes = false;
  return rep;
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("spearman_rho size mismatch: " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  const size_t n = a.size();
  if (n < 2) throw std::invalid_argument("spearman_rho needs at least 2 points");

  const auto ranks = [n](const std::vector<double>& v) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), (size_t)0);
    std::sort(idx.begin(), idx.end(), [&v](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * ((double)i + (double)j) + 1.0;  // average rank for ties
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };

  const std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= (double)n;
  mb /= (double)n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double xa = ra[i] - ma, xb = rb[i] - mb;
    cov += xa * xb;
    va += xa * xa;
    vb += xb * xb;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;  // a constant series carries no order
  return cov / std::sqrt(va * vb);
}

// ----- csv export -----

void write_matrix_csv(const Tensor& m, const std::vector<std::string>& cols,
                      const std::string& path) {
  if (m.shape.size() != 2)
    throw std::invalid_argument("write_matrix_csv expects a rank-2 tensor, got " +
                                shape_str(m.shape));
  if ((int64_t)cols.size() != m.shape[1])
    throw std::invalid_argument("write_matrix_csv: " + std::to_string(cols.size()) +
                                " column names for " + std::to_string(m.shape[1]) + " columns");
  std::string body;
  for (size_t j = 0; j < cols.size(); ++j) {
    if (j) body += ',';
    body += cols[j];
  }
  body += '\n';
  for (int64_t i = 0; i < m.shape[0]; ++i) {
    for (int64_t j = 0; j < m.shape[1]; ++j) {
      if (j) body += ',';
      append_g17(body, m.data[i * m.shape[1] + j]);
    }
    body += '\n';
  }
  write_text_file(path, body);
}

void write_score_profile_csv(const ScoreProfile& p, const std::string& path) {
  std::string body = "step,t,eps_norm,guidance_norm,difference\n";
  for (size_t i = 0; i < p.step.size(); ++i) {
    body += std::to_string(p.step[i]);
    body += ',';
    append_g17(body, p.t[i]);
    body += ',';
    append_g17(body, p.eps_norm[i]);
    body += ',';
    append_g17(body, p.guidance_norm[i]);
    body += ',';
    append_g17(body, p.difference[i]);
    body += '\n';
  }
  write_text_file(path, body);
}

}  // namespace sami
