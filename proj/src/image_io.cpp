#include "sami/image_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace sami {

namespace {

void write_bytes(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
  const bool ok = std::fwrite(body.data(), 1, body.size(), f) == body.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write to " + tmp);
  std::filesystem::rename(tmp, path);
}

std::string pgm_body(const Tensor& gray) {
  const int64_t h = gray.shape[0], w = gray.shape[1];
  std::string body = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  body.reserve(body.size() + (size_t)(h * w));
  for (double v : gray.data) body.push_back((char)quantize_pixel(v));
  return body;
}

// One whitespace-delimited non-negative integer; '#' starts a comment line.
int64_t pgm_int(const std::string& buf, size_t& pos, const char* what) {
  while (pos < buf.size()) {
    if (std::isspace((unsigned char)buf[pos])) {
      ++pos;
    } else if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= buf.size() || !std::isdigit((unsigned char)buf[pos]))
    throw std::runtime_error(std::string("pgm: expected ") + what + " at offset " +
                             std::to_string(pos));
  int64_t v = 0;
  while (pos < buf.size() && std::isdigit((unsigned char)buf[pos]))
    v = v * 10 + (buf[pos++] - '0');
  return v;
}

}  // namespace

uint8_t quantize_pixel(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return (uint8_t)std::floor(255.0 * c + 0.5);
}

void write_pgm(const Tensor& gray, const std::string& path) {
  if (gray.shape.size() != 2 || gray.shape[0] < 1 || gray.shape[1] < 1)
    throw std::invalid_argument("write_pgm expects a [H,W] image, got " + shape_str(gray.shape));
  write_bytes(path, pgm_body(gray));
}

Tensor read_pgm(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open image " + path);
  std::string buf;
  char chunk[65536];
  size_t n;
  while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) buf.append(chunk, n);
  std::fclose(f);

  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
    throw std::runtime_error("pgm: " + path + " is not a binary P5 file");
  size_t pos = 2;
  const int64_t w = pgm_int(buf, pos, "width");
  const int64_t h = pgm_int(buf, pos, "height");
  const int64_t maxval = pgm_int(buf, pos, "maxval");
  if (maxval != 255)
    throw std::runtime_error("pgm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (pos >= buf.size() || !std::isspace((unsigned char)buf[pos]))
    throw std::runtime_error("pgm: missing separator after header");
  ++pos;  // exactly one whitespace byte before the payload
  if (w < 1 || h < 1) throw std::runtime_error("pgm: degenerate dimensions");
  if (buf.size() - pos < (size_t)(w * h))
    throw std::runtime_error("pgm: truncated payload, have " +
                             std::to_string(buf.size() - pos) + " of " +
                             std::to_string(w * h) + " bytes");
  if (buf.size() - pos > (size_t)(w * h))
    throw std::runtime_error("pgm: trailing bytes after payload");

  Tensor out = Tensor::zeros({1, 1, h, w});
  for (int64_t i = 0; i < h * w; ++i) out.data[i] = (double)(uint8_t)buf[pos + i] / 255.0;
  return out;
}

void write_image_grid(const Tensor& images, int64_t rows, int64_t cols,
                      const std::string& path) {
  if (images.shape.size() != 4 || images.shape[1] != 1)
    throw std::invalid_argument("write_image_grid expects images [N,1,H,W], got " +
                                shape_str(images.shape));
  const int64_t n = images.shape[0], h = images.shape[2], w = images.shape[3];
  if (rows < 1 || cols < 1 || rows * cols < n)
    throw std::invalid_argument("write_image_grid: " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " grid cannot hold " + std::to_string(n) +
                                " images");
  const int64_t sep = 2;
  Tensor canvas = Tensor::full({rows * h + (rows - 1) * sep, cols * w + (cols - 1) * sep}, 1.0);
  const int64_t cw = canvas.shape[1];
  for (int64_t i = 0; i < n; ++i) {
    const int64_t r0 = (i / cols) * (h + sep), c0 = (i % cols) * (w + sep);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        canvas.data[(r0 + y) * cw + (c0 + x)] = images.data[(i * h + y) * w + x];
  }
  write_pgm(canvas, path);
}

}  // namespace sami
