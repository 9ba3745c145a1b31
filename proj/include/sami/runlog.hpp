#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sami {

// ----- per-step run records -----
//
// One record per training batch step or per sampling transition. Sampling
// steps carry no loss terms; those fields stay zero. `t` is a double because
// training logs the batch-mean level.

struct RunRecord {
  int64_t step = 0;
  double t = 0.0;
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double norm_eps = 0.0;       // mean per-example L2 norm of the noise estimate
  double norm_guidance = 0.0;  // mean per-example L2 norm of gamma_t * g
};

struct RunLog {
  std::vector<RunRecord> records;
};

// CSV with header step,t,loss,recon,kl,norm_eps,norm_guidance; doubles printed
// with %.17g so a round trip is value-exact.
void write_run_log_csv(const RunLog& log, const std::string& path);
RunLog read_run_log_csv(const std::string& path);

}  // namespace sami
