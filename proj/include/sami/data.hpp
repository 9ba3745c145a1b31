// Procedural disks: a single anti-aliased disk of fixed radius and intensity
// 0.5 over a uniform background. The three generative factors (c_x, c_y,
// I_bg) are drawn uniformly; video-style sequences move them along declared
// trajectories. Datasets round-trip through a little-endian binary file
// ("SMD1") that stores each image in f32 together with its factors.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sami/rng.hpp"
#include "sami/tensor.hpp"

namespace sami {

struct DiskFactors {
  double c_x = 0.0;  // in [radius, W - radius]
  double c_y = 0.0;  // in [radius, H - radius]
  double i_bg = 0.0; // in [0, 1]
};

struct DiskConfig {
  int64_t width = 32;
  int64_t height = 32;
  double radius = 8.0;
  double foreground = 0.5;
  double edge = 1.0;  // width of the linear blend band, pixels
};

struct DiskDataset {
  Tensor images;  // [N,1,H,W], values in [0,1]
  std::vector<DiskFactors> factors;
};

struct Sequence {
  std::vector<Tensor> frames;  // each [1,1,H,W]
  std::vector<DiskFactors> factors;
};

// Pixel (px,py) samples the field at its center (px+0.5, py+0.5); coverage
// ramps linearly across the edge band. Throws when the disk is not fully
// inside the image or i_bg is out of range. Returns [H,W].
Tensor render_disk(const DiskFactors& f, const DiskConfig& cfg);

// Factors i.i.d. uniform over their valid ranges; per record the draw order
// is c_x, c_y, i_bg.
DiskDataset generate_dataset(int64_t n, RngStream& rng, const DiskConfig& cfg);

// Constant-velocity center motion at fixed background; throws (naming the
// frame) when any frame's disk would leave the image.
Sequence make_drift_sequence(const DiskFactors& start, double vx, double vy, int64_t length,
                             const DiskConfig& cfg);

// Fixed center, background ramping linearly from a to b; both in [0,1].
Sequence make_contrast_sequence(double c_x, double c_y, double bg_a, double bg_b, int64_t length,
                                const DiskConfig& cfg);

// Random sequence of the given kind ("linear-drift" or "contrast-ramp").
// Drift endpoints are drawn inside the valid box, so the trajectory never
// exits; draw order: start pair, end pair, then background (drift) or
// center pair, then the two background endpoints (ramp).
Sequence generate_sequence(const std::string& kind, int64_t length, RngStream& rng,
                           const DiskConfig& cfg);

// ----- dataset file -----
// Layout: magic "SMD1", then W, H, N as u32 little-endian, then N records of
// (W*H image f32 row-major, c_x, c_y, i_bg f32). Written atomically.
void write_dataset(const DiskDataset& ds, const std::string& path);
DiskDataset read_dataset(const std::string& path);

}  // namespace sami
