#include "sami/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace sami {

void NoiseSchedule::check_level(int64_t t) const {
  if (t < 0 || t >= T)
    throw std::runtime_error("schedule: level " + std::to_string(t) + " outside [0, " +
                             std::to_string(T) + ")");
}

double NoiseSchedule::gamma(int64_t t) const {
  check_level(t);
  return std::sqrt(1.0 - alpha_bar[t]);
}

namespace {

double cosine_f(double u) {
  constexpr double s = 0.008;
  const double c = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
  return c * c;
}

}  // namespace

NoiseSchedule build_schedule(const std::string& kind, int64_t T, double beta_min,
                             double beta_max) {
  if (T < 2) throw std::runtime_error("build_schedule: T must be >= 2, got " + std::to_string(T));

  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  s.beta.resize(T);

  if (kind == "linear") {
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
      throw std::runtime_error("build_schedule: linear beta bounds must satisfy 0 < min <= max < 1");
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    for (int64_t t = 0; t < T; ++t)
      s.beta[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) /
                                 static_cast<double>(T - 1);
  } else if (kind == "cosine") {
    const double f0 = cosine_f(0.0);
    double prev_bar = 1.0;
    for (int64_t t = 0; t < T; ++t) {
      const double bar = cosine_f(static_cast<double>(t + 1) / static_cast<double>(T)) / f0;
      double b = 1.0 - bar / prev_bar;
      if (b > 0.999) b = 0.999;
      s.beta[t] = b;
      prev_bar = bar;
    }
  } else {
    throw std::runtime_error("build_schedule: unknown kind '" + kind + "'");
  }

  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double run = 1.0;
  for (int64_t t = 0; t < T; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    run *= s.alpha[t];
    s.alpha_bar[t] = run;
  }
  return s;
}

TimestepDist timestep_dist_from_string(const std::string& id) {
  if (id == "uniform") return TimestepDist::uniform;
  if (id == "increasing") return TimestepDist::increasing;
  if (id == "zero") return TimestepDist::zero;
  throw std::runtime_error("timestep_dist: unknown id '" + id + "'");
}

std::string timestep_dist_to_string(TimestepDist d) {
  if (d == TimestepDist::uniform) return "uniform";
  if (d == TimestepDist::increasing) return "increasing";
  return "zero";
}

int64_t sample_timestep(RngStream& rng, int64_t T, TimestepDist dist) {
  if (T < 1) throw std::runtime_error("sample_timestep: T must be >= 1");
  if (dist == TimestepDist::zero) return 0;
  const double u = rng.uniform();
  if (dist == TimestepDist::uniform) {
    int64_t t = static_cast<int64_t>(u * static_cast<double>(T));
    return t >= T ? T - 1 : t;
  }
  // P(t) proportional to t: inverse CDF by cumulative walk (level 0 has mass 0)
  const double total = static_cast<double>(T) * static_cast<double>(T - 1) / 2.0;
  const double target = u * total;
  double cum = 0.0;
  for (int64_t t = 1; t < T; ++t) {
    cum += static_cast<double>(t);
    if (target < cum) return t;
  }
  return T - 1;
}

}  // namespace sami
