#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sami/rng.hpp"

namespace sami {

// ----- noise schedule tables -----
//
// Levels are 0-indexed: level t means t+1 applications of forward noise, so
// alpha_bar[0] < 1 strictly and gamma(t) = sqrt(1 - alpha_bar[t]) lies in (0,1).

struct NoiseSchedule {
  std::string kind;  // "linear" or "cosine"
  int64_t T = 0;
  double beta_min = 0.0, beta_max = 0.0;  // linear endpoints; 0 for cosine
  std::vector<double> beta;       // [T], per-level variance increment
  std::vector<double> alpha;      // [T], 1 - beta[t]
  std::vector<double> alpha_bar;  // [T], running product of alpha

  double gamma(int64_t t) const;  // sqrt(1 - alpha_bar[t]), bounds-checked
  void check_level(int64_t t) const;
};

// kind "linear": beta linearly spaced over [beta_min, beta_max].
// kind "cosine": alpha_bar[t] = f((t+1)/T)/f(0), f(u) = cos^2(((u+s)/(1+s))*pi/2)
// with s = 0.008; beta derived from consecutive ratios and clipped to <= 0.999,
// then alpha_bar rebuilt from the clipped betas so the table stays consistent.
// Errors: T < 2, unknown kind, or linear bounds outside 0 < min <= max < 1.
NoiseSchedule build_schedule(const std::string& kind, int64_t T, double beta_min = 1e-4,
                             double beta_max = 0.02);

// ----- training timestep distributions -----

enum class TimestepDist {
  uniform,     // t ~ Uniform{0..T-1}
  increasing,  // P(t) proportional to t (level 0 never drawn)
  zero,        // t = 0 always (clean-image ablation)
};

TimestepDist timestep_dist_from_string(const std::string& id);  // errors on unknown id
std::string timestep_dist_to_string(TimestepDist d);
int64_t sample_timestep(RngStream& rng, int64_t T, TimestepDist dist);

}  // namespace sami
