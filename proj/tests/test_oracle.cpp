#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sami/oracle.hpp"

using namespace sami;

namespace {

GaussianWorld fixed_world(uint64_t seed = 700, double sigma_z2 = 0.1) {
  RngStream r(seed);
  return random_world(r, 4, 2, sigma_z2);
}

Tensor matvec_ref(const Tensor& a, const Tensor& v) {
  Tensor out = Tensor::zeros({a.shape[0]});
  for (int64_t i = 0; i < a.shape[0]; ++i)
    for (int64_t j = 0; j < a.shape[1]; ++j)
      out.data[i] += a.data[i * a.shape[1] + j] * v.data[j];
  return out;
}

}  // namespace

// ----- factorization helpers -----

TEST_CASE("cholesky factors and solves small SPD systems") {
  Tensor I({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor LI = cholesky(I);
  CHECK(LI.data == I.data);
  CHECK(chol_logdet(LI) == 0.0);

  RngStream r(1);
  GaussianWorld w = fixed_world();
  Tensor L = cholesky(w.S);
  // L L^T reproduces S
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < 4; ++k) acc += L.data[i * 4 + k] * L.data[j * 4 + k];
      CHECK(acc == doctest::Approx(w.S.data[i * 4 + j]).epsilon(1e-12));
    }

  Tensor b = r.normal_tensor({4});
  Tensor x = chol_solve(L, b);
  Tensor back = matvec_ref(w.S, x);
  for (int64_t i = 0; i < 4; ++i) CHECK(back.data[i] == doctest::Approx(b.data[i]).epsilon(1e-10));

  // multiple right-hand sides at once
  Tensor B = r.normal_tensor({4, 3});
  Tensor X = chol_solve(L, B);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 4; ++i) {
      double acc = 0.0;
      for (int64_t k = 0; k < 4; ++k) acc += w.S.data[i * 4 + k] * X.data[k * 3 + c];
      CHECK(acc == doctest::Approx(B.data[i * 3 + c]).epsilon(1e-10));
    }

  Tensor indef({2, 2}, {1.0, 2.0, 2.0, 1.0});
  CHECK_THROWS(cholesky(indef));
  CHECK_THROWS(cholesky(Tensor::zeros({3, 3})));
  CHECK_THROWS(cholesky(Tensor::zeros({2, 3})));
  CHECK_THROWS(chol_solve(L, r.normal_tensor({5})));
}

TEST_CASE("gaussian log density matches the hand expansion") {
  GaussianDist g{Tensor({1}, {0.0}), Tensor({1, 1}, {1.0})};
  constexpr double kLog2Pi = 1.8378770664093454836;
  CHECK(gaussian_log_density(g, Tensor({1}, {0.0})) == doctest::Approx(-0.5 * kLog2Pi));
  CHECK(gaussian_log_density(g, Tensor({1}, {2.0})) ==
        doctest::Approx(-0.5 * (4.0 + kLog2Pi)));

  GaussianDist g2{Tensor({2}, {1.0, -1.0}), Tensor({2, 2}, {2.0, 0.0, 0.0, 0.5})};
  const double v = gaussian_log_density(g2, Tensor({2}, {2.0, 0.0}));
  const double want = -0.5 * (1.0 / 2.0 + 1.0 / 0.5 + std::log(2.0 * 0.5) + 2.0 * kLog2Pi);
  CHECK(v == doctest::Approx(want).epsilon(1e-14));
}

// ----- marginal quantities -----

TEST_CASE("marginal score closed forms and finite differences") {
  NoiseSchedule s = build_schedule("linear", 400);
  GaussianWorld w = fixed_world();
  const int64_t t = 137;
  const double abar = s.alpha_bar[t];

  // at the marginal mean the score vanishes
  Tensor at_mean = Tensor::zeros({4});
  for (int64_t i = 0; i < 4; ++i) at_mean.data[i] = std::sqrt(abar) * w.m.data[i];
  // fused multiply-adds leave sub-ulp residue in the centered difference
  Tensor sc0 = marginal_score(w, s, t, at_mean);
  for (double v : sc0.data) CHECK(std::abs(v) <= 1e-15);

  // standard normal world: score is -x
  GaussianWorld std_w{Tensor::zeros({4}), Tensor({4, 4}, [] {
                        std::vector<double> e(16, 0.0);
                        for (int i = 0; i < 4; ++i) e[i * 4 + i] = 1.0;
                        return e;
                      }()),
                      Tensor::zeros({2, 4}), 1.0};
  RngStream r(2);
  Tensor x = r.normal_tensor({4});
  Tensor sc = marginal_score(std_w, s, t, x);
  for (int64_t i = 0; i < 4; ++i) CHECK(sc.data[i] == -x.data[i]);

  // random world: matches central differences of the analytic log density
  Tensor xt = r.normal_tensor({4});
  Tensor g = marginal_score(w, s, t, xt);
  Tensor mean = Tensor::zeros({4});
  for (int64_t i = 0; i < 4; ++i) mean.data[i] = std::sqrt(abar) * w.m.data[i];
  Tensor M = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j)
      M.data[i * 4 + j] = abar * w.S.data[i * 4 + j] + (i == j ? 1.0 - abar : 0.0);
  GaussianDist marg{mean, M};
  const double h = 1e-5;
  for (int64_t i = 0; i < 4; ++i) {
    Tensor up = xt, dn = xt;
    up.data[i] += h;
    dn.data[i] -= h;
    const double fd =
        (gaussian_log_density(marg, up) - gaussian_log_density(marg, dn)) / (2.0 * h);
    CHECK(std::abs(g.data[i] - fd) / std::max({std::abs(fd), std::abs(g.data[i]), 1e-8}) <= 1e-6);
  }

  CHECK_THROWS(marginal_score(w, s, 400, xt));
  CHECK_THROWS(marginal_score(w, s, t, r.normal_tensor({5})));
}

TEST_CASE("analytic denoiser scales the score and is exactly consistent with the clean posterior") {
  NoiseSchedule s = build_schedule("linear", 400);
  GaussianWorld w = fixed_world();
  RngStream r(3);

  // standard normal world: eps_hat = sqrt(1-abar) x
  GaussianWorld std_w{Tensor::zeros({2}), Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}),
                      Tensor::zeros({1, 2}), 1.0};
  Tensor x2 = r.normal_tensor({2});
  Tensor e2 = analytic_denoiser(std_w, s, 55, x2);
  for (int64_t i = 0; i < 2; ++i)
    CHECK(e2.data[i] == doctest::Approx(std::sqrt(1.0 - s.alpha_bar[55]) * x2.data[i])
                            .epsilon(1e-15));

  // noise estimate and clean-posterior mean express the same identity:
  // eps_hat == (x_t - sqrt(abar) E[x0|x_t]) / sqrt(1-abar), elementwise 1e-10
  for (int64_t t : {0L, 1L, 137L, 398L, 399L}) {
    Tensor xt = r.normal_tensor({4});
    Tensor eps = analytic_denoiser(w, s, t, xt);
    GaussianDist p0 = posterior_x0_given_xt(w, s, t, xt);
    const double abar = s.alpha_bar[t];
    for (int64_t i = 0; i < 4; ++i) {
      const double other =
          (xt.data[i] - std::sqrt(abar) * p0.mean.data[i]) / std::sqrt(1.0 - abar);
      CHECK(std::abs(eps.data[i] - other) <= 1e-10);
    }
  }
}

TEST_CASE("analytic denoiser is locally optimal for the diffusion objective") {
  NoiseSchedule s = build_schedule("linear", 100);
  GaussianWorld w = fixed_world();
  const int64_t B = 8192, D = 4;
  RngStream rdata(4);
  Tensor x0_rows = world_sample_batch(w, rdata, B);
  Tensor x0 = Tensor({B, 1, 1, D}, x0_rows.data);

  auto loss_of = [&](const EpsBatchFn& fn) {
    RngStream r(5);
    return ddpm_loss_core(fn, x0, s, r, TimestepDist::uniform, "one").val().scalar();
  };

  EpsBatchFn exact = [&](const Tensor& x, const std::vector<int64_t>& t) {
    Tensor out = Tensor::zeros(x.shape);
    for (int64_t b = 0; b < x.shape[0]; ++b) {
      Tensor row({D}, std::vector<double>(x.data.begin() + b * D, x.data.begin() + (b + 1) * D));
      Tensor e = analytic_denoiser(w, s, t[b], row);
      std::copy(e.data.begin(), e.data.end(), out.data.begin() + b * D);
    }
    return constant(out);
  };
  const double base = loss_of(exact);

  RngStream rp(6);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor P = rp.normal_tensor({D, D});
    Tensor q = rp.normal_tensor({D});
    EpsBatchFn perturbed = [&](const Tensor& x, const std::vector<int64_t>& t) {
      Tensor out = exact(x, t).val();
      for (int64_t b = 0; b < x.shape[0]; ++b)
        for (int64_t i = 0; i < D; ++i) {
          double acc = q.data[i];
          for (int64_t j = 0; j < D; ++j) acc += P.data[i * D + j] * x.data[b * D + j];
          out.data[b * D + i] += 0.1 * acc;
        }
      return constant(out);
    };
    CAPTURE(rep);
    CHECK(base < loss_of(perturbed));
  }
}

// ----- conditioning on the latent -----

TEST_CASE("conditional posterior limits") {
  GaussianWorld w = fixed_world();

  // exact observation through the identity map pins the posterior to z
  GaussianWorld exact = w;
  exact.A = Tensor({4, 4}, [] {
    std::vector<double> e(16, 0.0);
    for (int i = 0; i < 4; ++i) e[i * 4 + i] = 1.0;
    return e;
  }());
  exact.sigma_z2 = 1e-12;
  RngStream r(7);
  Tensor z4 = r.normal_tensor({4});
  GaussianDist p = conditional_posterior(exact, z4);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(p.mean.data[i] == doctest::Approx(z4.data[i]).epsilon(1e-8));
  for (double c : p.cov.data) CHECK(std::abs(c) <= 1e-10);

  // an all-zero observation map is uninformative: posterior == prior exactly
  GaussianWorld blind = w;
  blind.A = Tensor::zeros({2, 4});
  GaussianDist q = conditional_posterior(blind, Tensor({2}, {0.3, -0.8}));
  CHECK(q.mean.data == w.m.data);
  CHECK(q.cov.data == w.S.data);

  CHECK_THROWS(conditional_posterior(w, Tensor::zeros({3})));
}

TEST_CASE("conditional posterior agrees with importance sampling within three standard errors") {
  GaussianWorld w = fixed_world(700, 0.5);
  RngStream r(8);
  // draw a typical latent from the joint model
  Tensor x_star = world_sample_batch(w, r, 1);
  Tensor z = Tensor::zeros({2});
  for (int64_t i = 0; i < 2; ++i) {
    double acc = std::sqrt(w.sigma_z2) * r.normal();
    for (int64_t j = 0; j < 4; ++j) acc += w.A.data[i * 4 + j] * x_star.data[j];
    z.data[i] = acc;
  }
  GaussianDist post = conditional_posterior(w, z);

  const int64_t n = 600000;
  Tensor xs = world_sample_batch(w, r, n);
  std::vector<double> logw(n);
  double maxlw = -1e300;
  for (int64_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int64_t i = 0; i < 2; ++i) {
      double mu = 0.0;
      for (int64_t j = 0; j < 4; ++j) mu += w.A.data[i * 4 + j] * xs.data[k * 4 + j];
      acc += -0.5 * (z.data[i] - mu) * (z.data[i] - mu) / w.sigma_z2;
    }
    logw[k] = acc;
    maxlw = std::max(maxlw, acc);
  }
  std::vector<double> wt(n);
  double wsum = 0.0;
  for (int64_t k = 0; k < n; ++k) {
    wt[k] = std::exp(logw[k] - maxlw);
    wsum += wt[k];
  }
  for (int64_t k = 0; k < n; ++k) wt[k] /= wsum;

  for (int64_t i = 0; i < 4; ++i) {
    double est = 0.0;
    for (int64_t k = 0; k < n; ++k) est += wt[k] * xs.data[k * 4 + i];
    double var = 0.0;
    for (int64_t k = 0; k < n; ++k) {
      const double dv = xs.data[k * 4 + i] - est;
      var += wt[k] * wt[k] * dv * dv;
    }
    const double se = std::sqrt(var);
    CAPTURE(i);
    CHECK(std::abs(post.mean.data[i] - est) <= 3.0 * se);

    // diagonal covariance entries through the same weights
    double cest = 0.0;
    for (int64_t k = 0; k < n; ++k) {
      const double dv = xs.data[k * 4 + i] - est;
      cest += wt[k] * dv * dv;
    }
    double cvar = 0.0;
    for (int64_t k = 0; k < n; ++k) {
      const double dv = xs.data[k * 4 + i] - est;
      cvar += wt[k] * wt[k] * (dv * dv - cest) * (dv * dv - cest);
    }
    CHECK(std::abs(post.cov.data[i * 4 + i] - cest) <= 3.0 * std::sqrt(cvar));
  }
}

TEST_CASE("guidance gradient matches finite differences of the latent likelihood") {
  NoiseSchedule s = build_schedule("linear", 400);
  GaussianWorld w = fixed_world();
  RngStream r(9);
  Tensor xt = r.normal_tensor({4});
  Tensor z = r.normal_tensor({2});

  for (int64_t t : {3L, 199L, 396L}) {
    Tensor g = oracle_guidance(w, s, t, xt, z);
    const double h = 1e-5;
    for (int64_t i = 0; i < 4; ++i) {
      Tensor up = xt, dn = xt;
      up.data[i] += h;
      dn.data[i] -= h;
      const double fu = gaussian_log_density(latent_given_xt(w, s, t, up), z);
      const double fv = gaussian_log_density(latent_given_xt(w, s, t, dn), z);
      const double fd = (fu - fv) / (2.0 * h);
      CHECK(std::abs(g.data[i] - fd) /
                std::max({std::abs(fd), std::abs(g.data[i]), 1e-8}) <=
            1e-6);
    }
  }
}

TEST_CASE("bayes decomposition of the conditional score is exact") {
  NoiseSchedule s = build_schedule("linear", 400);
  GaussianWorld w = fixed_world();
  RngStream r(10);

  for (int64_t t : {0L, 1L, 137L, 399L}) {
    Tensor xt = r.normal_tensor({4});
    Tensor z = r.normal_tensor({2});
    Tensor lhs = conditional_score(w, s, t, xt, z);
    Tensor marg = marginal_score(w, s, t, xt);
    Tensor g = oracle_guidance(w, s, t, xt, z);
    for (int64_t i = 0; i < 4; ++i)
      CHECK(std::abs(lhs.data[i] - (marg.data[i] + g.data[i])) <= 1e-10);
  }
}

// ----- guided ancestral sampling -----

TEST_CASE("guided sampling reproduces the conditional posterior") {
  NoiseSchedule s = build_schedule("linear", 400);
  GaussianWorld w = fixed_world(700, 0.1);
  Tensor z({2}, {0.7, -0.4});
  GaussianDist post = conditional_posterior(w, z);

  RngStream r(11);
  RunLog log;
  const int64_t n = 2000;
  Tensor xs = oracle_guided_samples(w, s, z, r, n, CoefficientRule::derived, &log);
  REQUIRE(xs.shape == Shape{n, 4});
  CHECK(log.records.size() == 399);

  Tensor mean = Tensor::zeros({4});
  for (int64_t k = 0; k < n; ++k)
    for (int64_t i = 0; i < 4; ++i) mean.data[i] += xs.data[k * 4 + i] / n;
  Tensor cov = Tensor::zeros({4, 4});
  for (int64_t k = 0; k < n; ++k)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j)
        cov.data[i * 4 + j] += (xs.data[k * 4 + i] - mean.data[i]) *
                               (xs.data[k * 4 + j] - mean.data[j]) / (n - 1);

  double mnum = 0.0, mden = 0.0, cnum = 0.0, cden = 0.0;
  for (int64_t i = 0; i < 4; ++i) {
    mnum += (mean.data[i] - post.mean.data[i]) * (mean.data[i] - post.mean.data[i]);
    mden += post.mean.data[i] * post.mean.data[i];
  }
  for (int64_t i = 0; i < 16; ++i) {
    cnum += (cov.data[i] - post.cov.data[i]) * (cov.data[i] - post.cov.data[i]);
    cden += post.cov.data[i] * post.cov.data[i];
  }
  const double mean_rel = std::sqrt(mnum / mden);
  const double cov_rel = std::sqrt(cnum / cden);
  CAPTURE(mean_rel);
  CAPTURE(cov_rel);
  CHECK(mean_rel <= 0.10);
  CHECK(cov_rel <= 0.10);

  // same stream, same bits
  RngStream r2(11);
  Tensor again = oracle_guided_samples(w, s, z, r2, n, CoefficientRule::derived, nullptr);
  CHECK(t_max_abs(t_sub(xs, again)) == 0.0);
}
