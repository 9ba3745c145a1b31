#include "sami/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <stdexcept>

namespace sami {

namespace {

void check_cfg(const DiskConfig& cfg) {
  if (cfg.width < 2 || cfg.height < 2) throw std::runtime_error("disks: image too small");
  if (!(cfg.radius > 0.0)) throw std::runtime_error("disks: radius must be > 0");
  if (2.0 * cfg.radius > std::min(cfg.width, cfg.height))
    throw std::runtime_error("disks: radius " + std::to_string(cfg.radius) +
                             " does not fit the image");
  if (!(cfg.edge > 0.0)) throw std::runtime_error("disks: edge band must be > 0");
}

void check_factors(const DiskFactors& f, const DiskConfig& cfg) {
  if (!(f.c_x >= cfg.radius && f.c_x <= cfg.width - cfg.radius) ||
      !(f.c_y >= cfg.radius && f.c_y <= cfg.height - cfg.radius))
    throw std::runtime_error("disks: center (" + std::to_string(f.c_x) + "," +
                             std::to_string(f.c_y) + ") puts the disk outside the image");
  if (!(f.i_bg >= 0.0 && f.i_bg <= 1.0))
    throw std::runtime_error("disks: background intensity " + std::to_string(f.i_bg) +
                             " outside [0,1]");
}

}  // namespace

Tensor render_disk(const DiskFactors& f, const DiskConfig& cfg) {
  check_cfg(cfg);
  check_factors(f, cfg);
  Tensor img = Tensor::zeros({cfg.height, cfg.width});
  for (int64_t py = 0; py < cfg.height; ++py)
    for (int64_t px = 0; px < cfg.width; ++px) {
      const double dx = px + 0.5 - f.c_x;
      const double dy = py + 0.5 - f.c_y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double alpha =
          std::clamp((cfg.radius + 0.5 * cfg.edge - dist) / cfg.edge, 0.0, 1.0);
      img.data[py * cfg.width + px] = alpha * cfg.foreground + (1.0 - alpha) * f.i_bg;
    }
  return img;
}

DiskDataset generate_dataset(int64_t n, RngStream& rng, const DiskConfig& cfg) {
  check_cfg(cfg);
  if (n < 1) throw std::runtime_error("disks: need n >= 1");
  DiskDataset ds;
  ds.images = Tensor::zeros({n, 1, cfg.height, cfg.width});
  ds.factors.reserve(n);
  const int64_t per = cfg.height * cfg.width;
  for (int64_t i = 0; i < n; ++i) {
    DiskFactors f;
    f.c_x = cfg.radius + rng.uniform() * (cfg.width - 2.0 * cfg.radius);
    f.c_y = cfg.radius + rng.uniform() * (cfg.height - 2.0 * cfg.radius);
    f.i_bg = rng.uniform();
    Tensor img = render_disk(f, cfg);
    std::copy(img.data.begin(), img.data.end(), ds.images.data.begin() + i * per);
    ds.factors.push_back(f);
  }
  return ds;
}

Sequence make_drift_sequence(const DiskFactors& start, double vx, double vy, int64_t length,
                             const DiskConfig& cfg) {
  if (length < 2) throw std::runtime_error("disks: sequence length must be >= 2");
  Sequence seq;
  for (int64_t k = 0; k < length; ++k) {
    DiskFactors f = start;
    f.c_x = start.c_x + vx * k;
    f.c_y = start.c_y + vy * k;
    try {
      check_factors(f, cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("disks: drift trajectory leaves the image at frame " +
                               std::to_string(k) + ": " + e.what());
    }
    Tensor img = render_disk(f, cfg);
    seq.frames.push_back(Tensor({1, 1, cfg.height, cfg.width}, img.data));
    seq.factors.push_back(f);
  }
  return seq;
}

Sequence make_contrast_sequence(double c_x, double c_y, double bg_a, double bg_b, int64_t length,
                                const DiskConfig& cfg) {
  if (length < 2) throw std::runtime_error("disks: sequence length must be >= 2");
  Sequence seq;
  for (int64_t k = 0; k < length; ++k) {
    DiskFactors f;
    f.c_x = c_x;
    f.c_y = c_y;
    f.i_bg = bg_a + (bg_b - bg_a) * static_cast<double>(k) / static_cast<double>(length - 1);
    try {
      check_factors(f, cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("disks: contrast ramp invalid at frame " + std::to_string(k) +
                               ": " + e.what());
    }
    Tensor img = render_disk(f, cfg);
    seq.frames.push_back(Tensor({1, 1, cfg.height, cfg.width}, img.data));
    seq.factors.push_back(f);
  }
  return seq;
}

Sequence generate_sequence(const std::string& kind, int64_t length, RngStream& rng,
                           const DiskConfig& cfg) {
  check_cfg(cfg);
  if (length < 2) throw std::runtime_error("disks: sequence length must be >= 2");
  auto in_box_x = [&] { return cfg.radius + rng.uniform() * (cfg.width - 2.0 * cfg.radius); };
  auto in_box_y = [&] { return cfg.radius + rng.uniform() * (cfg.height - 2.0 * cfg.radius); };
  if (kind == "linear-drift") {
    DiskFactors start;
    start.c_x = in_box_x();
    start.c_y = in_box_y();
    const double ex = in_box_x(), ey = in_box_y();
    start.i_bg = rng.uniform();
    const double vx = (ex - start.c_x) / static_cast<double>(length - 1);
    const double vy = (ey - start.c_y) / static_cast<double>(length - 1);
    return make_drift_sequence(start, vx, vy, length, cfg);
  }
  if (kind == "contrast-ramp") {
    const double cx = in_box_x(), cy = in_box_y();
    const double a = rng.uniform(), b = rng.uniform();
    return make_contrast_sequence(cx, cy, a, b, length, cfg);
  }
  throw std::runtime_error("disks: unknown sequence kind '" + kind + "'");
}

// ----- dataset file -----

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
  float f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

uint32_t get_u32(const std::string& s, size_t& pos, const char* what) {
  if (pos + 4 > s.size())
    throw std::runtime_error("dataset: truncated while reading " + std::string(what) +
                             " at offset " + std::to_string(pos));
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

double get_f32(const std::string& s, size_t& pos, const char* what) {
  uint32_t bits = get_u32(s, pos, what);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

}  // namespace

void write_dataset(const DiskDataset& ds, const std::string& path) {
  if (ds.images.rank() != 4 || ds.images.shape[1] != 1)
    throw std::runtime_error("dataset: images must be [N,1,H,W]");
  const int64_t N = ds.images.shape[0], H = ds.images.shape[2], W = ds.images.shape[3];
  if (static_cast<int64_t>(ds.factors.size()) != N)
    throw std::runtime_error("dataset: " + std::to_string(ds.factors.size()) +
                             " factor records for " + std::to_string(N) + " images");
  std::string out;
  out.reserve(12 + static_cast<size_t>(N) * (static_cast<size_t>(H * W) + 3) * 4 + 4);
  out += "SMD1";
  put_u32(out, static_cast<uint32_t>(W));
  put_u32(out, static_cast<uint32_t>(H));
  put_u32(out, static_cast<uint32_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    const int64_t base = i * H * W;
    for (int64_t k = 0; k < H * W; ++k) put_f32(out, ds.images.data[base + k]);
    put_f32(out, ds.factors[i].c_x);
    put_f32(out, ds.factors[i].c_y);
    put_f32(out, ds.factors[i].i_bg);
  }

  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("dataset: cannot open '" + tmp + "' for writing");
  const size_t wrote = std::fwrite(out.data(), 1, out.size(), f);
  if (std::fclose(f) != 0 || wrote != out.size())
    throw std::runtime_error("dataset: write to '" + tmp + "' failed");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("dataset: cannot move '" + tmp + "' to '" + path + "'");
}

DiskDataset read_dataset(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("dataset: cannot open '" + path + "'");
  std::string text;
  char buf[65536];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);

  size_t pos = 0;
  if (text.size() < 4 || text.compare(0, 4, "SMD1") != 0)
    throw std::runtime_error("dataset: '" + path + "' lacks the SMD1 magic");
  pos = 4;
  const uint32_t W = get_u32(text, pos, "width");
  const uint32_t H = get_u32(text, pos, "height");
  const uint32_t N = get_u32(text, pos, "count");
  if (W == 0 || H == 0 || N == 0)
    throw std::runtime_error("dataset: '" + path + "' header has a zero dimension");

  DiskDataset ds;
  ds.images = Tensor::zeros({N, 1, H, W});
  ds.factors.resize(N);
  const int64_t per = static_cast<int64_t>(H) * W;
  for (uint32_t i = 0; i < N; ++i) {
    for (int64_t k = 0; k < per; ++k)
      ds.images.data[i * per + k] = get_f32(text, pos, "image pixels");
    ds.factors[i].c_x = get_f32(text, pos, "factor c_x");
    ds.factors[i].c_y = get_f32(text, pos, "factor c_y");
    ds.factors[i].i_bg = get_f32(text, pos, "factor i_bg");
  }
  if (pos != text.size())
    throw std::runtime_error("dataset: " + std::to_string(text.size() - pos) +
                             " trailing bytes after the last record");
  return ds;
}

}  // namespace sami
