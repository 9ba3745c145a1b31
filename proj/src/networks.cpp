#include "sami/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace sami {

// ----- parameter storage -----

Var& ParamStore::at(const std::string& name) {
  for (auto& [n, v] : items)
    if (n == name) return v;
  throw std::runtime_error("params: no parameter named '" + name + "'");
}

const Var& ParamStore::at(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return v;
  throw std::runtime_error("params: no parameter named '" + name + "'");
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return true;
  return false;
}

void ParamStore::add(const std::string& name, Tensor init, bool requires_grad) {
  if (has(name)) throw std::runtime_error("params: duplicate parameter '" + name + "'");
  Var v = requires_grad ? leaf(std::move(init)) : constant(std::move(init));
  items.emplace_back(name, v);
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, v] : items) n += v.n->value.numel();
  return n;
}

void ParamStore::set_requires_grad(bool rg) {
  for (auto& [name, v] : items) v.n->requires_grad = rg;
}

// ----- init -----

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Every parameter draws from its own child stream keyed by name.
void add_param(ParamStore& store, RngStream& rng, const std::string& name, const Shape& shape,
               int64_t fan_in) {
  RngStream sub = rng.split(fnv1a(name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  store.add(name, sub.uniform_tensor(shape, -bound, bound));
}

void add_conv(ParamStore& store, RngStream& rng, const std::string& name, int64_t cout,
              int64_t cin, int64_t k, bool bias) {
  const int64_t fan_in = cin * k * k;
  add_param(store, rng, name + ".w", {cout, cin, k, k}, fan_in);
  if (bias) add_param(store, rng, name + ".b", {cout, 1, 1}, fan_in);
}

void add_linear(ParamStore& store, RngStream& rng, const std::string& name, int64_t in,
                int64_t out) {
  add_param(store, rng, name + ".w", {in, out}, in);
  add_param(store, rng, name + ".b", {out}, in);
}

Var act_of(const std::string& kind, const Var& x) {
  if (kind == "silu") return silu(x);
  if (kind == "relu") return relu(x);
  throw std::runtime_error("networks: unknown nonlinearity '" + kind + "'");
}

void check_nonlinearity(const std::string& kind) {
  if (kind != "silu" && kind != "relu")
    throw std::runtime_error("networks: unknown nonlinearity '" + kind + "'");
}

Var conv_b(const ParamStore& p, const std::string& name, const Var& x, int64_t stride) {
  Var h = conv2d(x, p.at(name + ".w"), stride, 1);
  return add(h, broadcast_to(p.at(name + ".b"), h.shape()));
}

// Strided-conv output size with k=3, p=1.
int64_t down_size(int64_t n) { return (n - 1) / 2 + 1; }

int64_t max_levels(int64_t width, int64_t height) {
  const int64_t m = std::min(width, height);
  int64_t lg = 0;
  while ((int64_t{1} << (lg + 1)) <= m) ++lg;
  return lg;  // floor(log2(min(W,H)))
}

}  // namespace

DenoiserParams init_denoiser(const DenoiserConfig& cfg, int64_t width, int64_t height,
                             RngStream& rng) {
  if (cfg.base < 1) throw std::runtime_error("denoiser: base channels must be >= 1");
  if (cfg.mults.empty()) throw std::runtime_error("denoiser: multiplier list is empty");
  for (int64_t m : cfg.mults)
    if (m < 1) throw std::runtime_error("denoiser: multipliers must be >= 1");
  check_nonlinearity(cfg.nonlinearity);
  const int64_t L = static_cast<int64_t>(cfg.mults.size());
  if (L - 1 > max_levels(width, height))
    throw std::runtime_error("denoiser: " + std::to_string(L) + " levels need " +
                             std::to_string(L - 1) + " downsamples, more than log2 of the " +
                             std::to_string(std::min(width, height)) + "-pixel image side");

  DenoiserParams p;
  p.cfg = cfg;
  p.width = width;
  p.height = height;
  auto ch = [&](int64_t i) { return cfg.base * cfg.mults[i]; };

  add_conv(p.params, rng, "den.stem", ch(0), 2, 3, true);  // image + level channel
  for (int64_t i = 0; i < L; ++i) {
    add_conv(p.params, rng, "den.d" + std::to_string(i) + ".c1", ch(i), ch(i), 3, true);
    add_conv(p.params, rng, "den.d" + std::to_string(i) + ".c2", ch(i), ch(i), 3, true);
    if (i < L - 1) add_conv(p.params, rng, "den.ds" + std::to_string(i), ch(i + 1), ch(i), 3, true);
  }
  add_conv(p.params, rng, "den.mid.c1", ch(L - 1), ch(L - 1), 3, true);
  add_conv(p.params, rng, "den.mid.c2", ch(L - 1), ch(L - 1), 3, true);
  for (int64_t i = L - 2; i >= 0; --i) {
    const std::string u = "den.u" + std::to_string(i);
    // transposed conv stored in its conv orientation [ch(i+1), ch(i), 3, 3]
    add_param(p.params, rng, u + ".t.w", {ch(i + 1), ch(i), 3, 3}, ch(i + 1) * 9);
    add_param(p.params, rng, u + ".t.b", {ch(i), 1, 1}, ch(i + 1) * 9);
    add_conv(p.params, rng, u + ".c1", ch(i), 2 * ch(i), 3, true);
    add_conv(p.params, rng, u + ".c2", ch(i), ch(i), 3, true);
  }
  add_conv(p.params, rng, "den.head", 1, ch(0), 3, true);
  return p;
}

EncoderParams init_encoder(const EncoderConfig& cfg, int64_t width, int64_t height,
                           RngStream& rng) {
  if (cfg.base < 1) throw std::runtime_error("encoder: base channels must be >= 1");
  if (cfg.mults.empty()) throw std::runtime_error("encoder: multiplier list is empty");
  for (int64_t m : cfg.mults)
    if (m < 1) throw std::runtime_error("encoder: multipliers must be >= 1");
  if (cfg.latent_dim < 1) throw std::runtime_error("encoder: latent dim must be >= 1");
  check_nonlinearity(cfg.nonlinearity);
  const int64_t L = static_cast<int64_t>(cfg.mults.size());
  if (L > max_levels(width, height))
    throw std::runtime_error("encoder: " + std::to_string(L) +
                             " strided stages exceed log2 of the " +
                             std::to_string(std::min(width, height)) + "-pixel image side");

  EncoderParams p;
  p.cfg = cfg;
  p.width = width;
  p.height = height;
  int64_t cin = 1, h = height, w = width;
  for (int64_t i = 0; i < L; ++i) {
    const int64_t cout = cfg.base * cfg.mults[i];
    // conv stack carries no biases
    add_param(p.params, rng, "enc.c" + std::to_string(i) + ".w", {cout, cin, 3, 3}, cin * 9);
    cin = cout;
    h = down_size(h);
    w = down_size(w);
  }
  const int64_t flat = cin * h * w;
  add_linear(p.params, rng, "enc.mean", flat, cfg.latent_dim);
  add_linear(p.params, rng, "enc.var", flat, cfg.latent_dim);
  return p;
}

std::pair<DenoiserParams, EncoderParams> init_models(const ModelConfig& cfg, RngStream& rng) {
  RngStream dr = rng.split(fnv1a("denoiser"));
  RngStream er = rng.split(fnv1a("encoder"));
  return {init_denoiser(cfg.denoiser, cfg.width, cfg.height, dr),
          init_encoder(cfg.encoder, cfg.width, cfg.height, er)};
}

// ----- denoiser forward -----

Tensor time_channel(int64_t t, int64_t width, int64_t height) {
  // sinusoidal embedding over columns, identical in every row
  std::vector<double> e(width);
  for (int64_t k = 0; k < width; ++k) {
    const int64_t i = k / 2;
    const double omega =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
    const double a = static_cast<double>(t) * omega;
    e[k] = (k % 2 == 0) ? std::sin(a) : std::cos(a);
  }
  Tensor c = Tensor::zeros({1, 1, height, width});
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x) c.data[y * width + x] = e[x];
  return c;
}

Var denoise(const DenoiserParams& p, const Var& x_t, const std::vector<int64_t>& t, int64_t T) {
  const Shape& xs = x_t.shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != p.height || xs[3] != p.width)
    throw std::runtime_error("denoise: expected [B,1," + std::to_string(p.height) + "," +
                             std::to_string(p.width) + "], got " + shape_str(xs));
  const int64_t B = xs[0];
  if (t.size() != static_cast<size_t>(B) && t.size() != 1)
    throw std::runtime_error("denoise: level list must have 1 or B entries");
  for (int64_t lv : t)
    if (lv < 0 || lv >= T)
      throw std::runtime_error("denoise: level " + std::to_string(lv) + " outside [0, " +
                               std::to_string(T) + ")");

  Tensor tc = Tensor::zeros({B, 1, p.height, p.width});
  const int64_t plane = p.height * p.width;
  for (int64_t b = 0; b < B; ++b) {
    Tensor one = time_channel(t.size() == 1 ? t[0] : t[b], p.width, p.height);
    std::copy(one.data.begin(), one.data.end(), tc.data.begin() + b * plane);
  }

  const auto& ps = p.params;
  const std::string& nl = p.cfg.nonlinearity;
  const int64_t L = static_cast<int64_t>(p.cfg.mults.size());

  Var h = conv_b(ps, "den.stem", concat({x_t, constant(tc)}, 1), 1);
  std::vector<Var> skips;
  std::vector<Shape> level_shapes;
  for (int64_t i = 0; i < L; ++i) {
    const std::string d = "den.d" + std::to_string(i);
    h = act_of(nl, conv_b(ps, d + ".c1", h, 1));
    h = act_of(nl, conv_b(ps, d + ".c2", h, 1));
    skips.push_back(h);
    level_shapes.push_back(h.shape());
    if (i < L - 1) h = act_of(nl, conv_b(ps, "den.ds" + std::to_string(i), h, 2));
  }
  h = act_of(nl, conv_b(ps, "den.mid.c1", h, 1));
  h = act_of(nl, conv_b(ps, "den.mid.c2", h, 1));
  for (int64_t i = L - 2; i >= 0; --i) {
    const std::string u = "den.u" + std::to_string(i);
    Var up = conv2d_input_grad(h, ps.at(u + ".t.w"), 2, 1, level_shapes[i]);
    up = act_of(nl, add(up, broadcast_to(ps.at(u + ".t.b"), up.shape())));
    h = concat({up, skips[i]}, 1);
    h = act_of(nl, conv_b(ps, u + ".c1", h, 1));
    h = act_of(nl, conv_b(ps, u + ".c2", h, 1));
  }
  return conv_b(ps, "den.head", h, 1);
}

Var denoise(const DenoiserParams& p, const Var& x_t, int64_t t, int64_t T) {
  return denoise(p, x_t, std::vector<int64_t>{t}, T);
}

// ----- encoder forward -----

GaussianPosterior encode(const EncoderParams& p, const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != p.height || xs[3] != p.width)
    throw std::runtime_error("encode: expected [B,1," + std::to_string(p.height) + "," +
                             std::to_string(p.width) + "], got " + shape_str(xs));
  const int64_t B = xs[0];
  const int64_t L = static_cast<int64_t>(p.cfg.mults.size());

  Var h = x;
  for (int64_t i = 0; i < L; ++i)
    h = act_of(p.cfg.nonlinearity, conv2d(h, p.params.at("enc.c" + std::to_string(i) + ".w"), 2, 1));
  const Shape hs = h.shape();
  Var flat = reshape(h, {B, hs[1] * hs[2] * hs[3]});

  Var mean = matmul(flat, p.params.at("enc.mean.w"));
  mean = add(mean, broadcast_to(p.params.at("enc.mean.b"), mean.shape()));
  Var raw = matmul(flat, p.params.at("enc.var.w"));
  raw = add(raw, broadcast_to(p.params.at("enc.var.b"), raw.shape()));
  // the 1e-12 floor keeps log(variance) finite even when a saturated head
  // underflows softplus to exactly zero (e.g. wildly out-of-range inputs)
  return {mean, cadd(square(softplus(raw)), 1e-12)};
}

}  // namespace sami
