// Line-based run configuration: `key = value` entries grouped under
// [model], [schedule], [training], [data], and [analysis] sections. Unknown
// sections, unknown keys, and duplicate keys are errors; missing keys keep
// their defaults. print_config emits every key in canonical order so
// parse_config(print_config(c)) == c exactly, and the run journal records
// the FNV-1a hash of that canonical text.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sami/data.hpp"
#include "sami/guidance.hpp"
#include "sami/networks.hpp"
#include "sami/schedule.hpp"

namespace sami {

struct ScheduleConfig {
  std::string kind = "linear";
  int64_t steps = 400;
  double beta_min = 1e-4, beta_max = 0.02;
};

struct DataConfig {
  int64_t n_train = 2000;
  double radius = 8.0, foreground = 0.5, edge = 1.0;
};

struct AnalysisConfig {
  int64_t t_ref = 40;          // noise level for coherence reports
  int64_t probes = 8;          // smoothness probe count
  int64_t traverse_steps = 8;  // latent traversal resolution
  int64_t profile_draws = 8;   // noise draws per level in variance profiles
  int64_t profile_levels = 10; // evenly spaced levels in variance profiles
  int64_t eval_images = 200;   // images consumed by dataset-level metrics
};

struct RunConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig training;
  DataConfig data;
  AnalysisConfig analysis;
};

bool operator==(const ScheduleConfig& a, const ScheduleConfig& b);
bool operator==(const DataConfig& a, const DataConfig& b);
bool operator==(const AnalysisConfig& a, const AnalysisConfig& b);
bool operator==(const DenoiserConfig& a, const DenoiserConfig& b);
bool operator==(const EncoderConfig& a, const EncoderConfig& b);
bool operator==(const ModelConfig& a, const ModelConfig& b);
bool operator==(const TrainConfig& a, const TrainConfig& b);
bool operator==(const RunConfig& a, const RunConfig& b);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string print_config(const RunConfig& c);

uint64_t fnv1a64(const std::string& s);
std::string config_hash(const RunConfig& c);  // 16 lowercase hex digits

// Derived objects.
NoiseSchedule schedule_from(const ScheduleConfig& c);
DiskConfig disk_config_from(const RunConfig& c);

// Appends one manifest line `command \t hash \t seed \t out1;out2` to the
// journal; the file records what ran, never when.
void journal_append(const std::string& path, const std::string& command,
                    const std::string& cfg_hash, uint64_t seed,
                    const std::vector<std::string>& outputs);

}  // namespace sami
