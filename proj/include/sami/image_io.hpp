// Binary PGM (P5) image emission and loading. Pixels in [0,1] quantize to
// bytes by round-half-up(255 * clamp(v, 0, 1)); grids tile images row-major
// with 2-pixel separators at intensity 255, and unused trailing cells stay
// at the separator intensity. Files are written atomically.
#pragma once

#include <cstdint>
#include <string>

#include "sami/tensor.hpp"

namespace sami {

uint8_t quantize_pixel(double v);  // round-half-up(255 * clamp(v, 0, 1))

void write_pgm(const Tensor& gray, const std::string& path);  // [H,W]
Tensor read_pgm(const std::string& path);                     // -> [1,1,H,W], bytes / 255

// images [N,1,H,W], rows * cols >= N.
void write_image_grid(const Tensor& images, int64_t rows, int64_t cols,
                      const std::string& path);

}  // namespace sami
