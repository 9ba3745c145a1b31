#include "sami/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>
#include <stdexcept>

namespace sami {

namespace {

constexpr uint32_t kVersion = 1;

// ----- little-endian emit -----

void put_u8(std::string& out, uint8_t v) { out.push_back((char)v); }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back((char)((bits >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, (uint32_t)s.size());
  out += s;
}

// ----- little-endian consume with offsets in every error -----

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  [[noreturn]] void truncated(const std::string& what) const {
    throw std::runtime_error("checkpoint truncated while reading " + what + " at offset " +
                             std::to_string(pos));
  }
  void need(size_t n, const std::string& what) const {
    if (pos + n > buf.size()) truncated(what);
  }
  uint8_t u8(const std::string& what) {
    need(1, what);
    return (uint8_t)buf[pos++];
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)(uint8_t)buf[pos + i] << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const std::string& what) {
    need(8, what);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= (uint64_t)(uint8_t)buf[pos + i] << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32(const std::string& what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(const std::string& what) {
    const uint32_t n = u32(what + " length");
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

ParamStore& bundle_store_for(ModelBundle& b, const std::string& name) {
  return name.rfind("den.", 0) == 0 ? b.den.params : b.enc.params;
}

void append_params(std::string& out, const ParamStore& store, bool f32) {
  for (const auto& [name, v] : store.items) {
    put_str(out, name);
    put_u8(out, f32 ? 0 : 1);
    const Tensor& t = v.n->value;
    put_u32(out, (uint32_t)t.shape.size());
    for (int64_t dim : t.shape) put_u32(out, (uint32_t)dim);
    for (double x : t.data) {
      if (f32) put_f32(out, (float)x);
      else put_f64(out, x);
    }
  }
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const RunConfig& cfg, const std::string& path,
                     const std::string& dtype) {
  if (dtype != "f64" && dtype != "f32")
    throw std::invalid_argument("checkpoint dtype must be f64 or f32, got '" + dtype + "'");
  if (!(cfg.model == bundle.model_cfg))
    throw std::invalid_argument("checkpoint config does not describe the bundle's models");
  if (cfg.schedule.kind != bundle.sched.kind || cfg.schedule.steps != bundle.sched.T)
    throw std::invalid_argument("checkpoint config does not describe the bundle's schedule");

  std::string out = "SAMI";
  put_u32(out, kVersion);
  put_str(out, cfg.schedule.kind);
  put_u32(out, (uint32_t)cfg.schedule.steps);
  put_f64(out, cfg.schedule.beta_min);
  put_f64(out, cfg.schedule.beta_max);
  put_str(out, print_config(cfg));

  const bool f32 = dtype == "f32";
  put_u32(out, (uint32_t)(bundle.den.params.items.size() + bundle.enc.params.items.size()));
  append_params(out, bundle.den.params, f32);
  append_params(out, bundle.enc.params, f32);

  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
  const bool ok = std::fwrite(out.data(), 1, out.size(), f) == out.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write to " + tmp);
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::string buf;
  char chunk[65536];
  size_t n;
  while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) buf.append(chunk, n);
  std::fclose(f);

  Reader r{buf};
  r.need(4, "magic");
  if (buf.compare(0, 4, "SAMI") != 0)
    throw std::runtime_error("not a checkpoint: bad magic in " + path);
  r.pos = 4;
  const uint32_t version = r.u32("format version");
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " (expected " + std::to_string(kVersion) + ")");

  const std::string kind = r.str("schedule kind");
  const uint32_t steps = r.u32("schedule steps");
  const double beta_min = r.f64("schedule beta_min");
  const double beta_max = r.f64("schedule beta_max");
  const std::string echo = r.str("config echo");

  LoadedCheckpoint out;
  out.config = parse_config(echo);
  if (out.config.schedule.kind != kind || out.config.schedule.steps != (int64_t)steps ||
      out.config.schedule.beta_min != beta_min || out.config.schedule.beta_max != beta_max)
    throw std::runtime_error("checkpoint schedule descriptor disagrees with its config echo");

  // Rebuild the bundle structurally, then overwrite every parameter.
  RngStream scratch(0);
  auto [den, enc] = init_models(out.config.model, scratch);
  out.bundle = ModelBundle{std::move(den), std::move(enc),
                           schedule_from(out.config.schedule), out.config.model};

  const uint32_t count = r.u32("tensor count");
  std::set<std::string> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str("tensor name");
    const uint8_t tag = r.u8("dtype tag of '" + name + "'");
    if (tag > 1)
      throw std::runtime_error("checkpoint tensor '" + name + "' has unknown dtype tag " +
                               std::to_string(tag));
    const uint32_t rank = r.u32("rank of '" + name + "'");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      shape[k] = r.u32("shape of '" + name + "'");
      numel *= shape[k];
    }

    ParamStore& store = bundle_store_for(out.bundle, name);
    if (!store.has(name))
      throw std::runtime_error("checkpoint tensor '" + name + "' is not a model parameter");
    if (!loaded.insert(name).second)
      throw std::runtime_error("checkpoint tensor '" + name + "' appears twice");
    Tensor& dst = store.at(name).n->value;
    if (dst.shape != shape)
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                               ", model expects " + shape_str(dst.shape));
    for (int64_t k = 0; k < numel; ++k)
      dst.data[k] = tag == 0 ? (double)r.f32("payload of '" + name + "'")
                             : r.f64("payload of '" + name + "'");
  }

  const auto check_all = [&loaded](const ParamStore& store) {
    for (const auto& [name, v] : store.items) {
      (void)v;
      if (!loaded.count(name))
        throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
    }
  };
  check_all(out.bundle.den.params);
  check_all(out.bundle.enc.params);

  if (r.pos != buf.size())
    throw std::runtime_error("checkpoint has " + std::to_string(buf.size() - r.pos) +
                             " trailing bytes after the tensor table");
  return out;
}

}  // namespace sami
