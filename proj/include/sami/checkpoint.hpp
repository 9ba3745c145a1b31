// Model persistence. A checkpoint is "SAMI", a u32 format version, a
// schedule descriptor (kind, steps, beta endpoints), the canonical config
// text, and a tensor table of (name, dtype tag f32/f64, rank, shape,
// row-major payload), all little-endian. Loading rebuilds the bundle from
// the embedded config and overwrites parameters from the table, so a f64
// round trip is bit-exact and f32 payloads widen exactly; any mismatch
// between table and config (unknown name, wrong shape, missing parameter)
// is an error, as is a truncated or oversized file.
#pragma once

#include <string>

#include "sami/config.hpp"
#include "sami/guidance.hpp"

namespace sami {

struct LoadedCheckpoint {
  ModelBundle bundle;
  RunConfig config;
};

// dtype selects the stored payload width: "f64" (default) or "f32".
// The config's model and schedule sections must describe the bundle.
void save_checkpoint(const ModelBundle& bundle, const RunConfig& cfg, const std::string& path,
                     const std::string& dtype = "f64");

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace sami
