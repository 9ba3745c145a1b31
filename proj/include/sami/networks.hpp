#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sami/autodiff.hpp"
#include "sami/rng.hpp"

namespace sami {

// ----- parameter storage -----
//
// Ordered name -> leaf Var table. Order is the registration order and fixes
// the optimizer update sequence, so runs are reproducible.

struct ParamStore {
  std::vector<std::pair<std::string, Var>> items;

  Var& at(const std::string& name);
  const Var& at(const std::string& name) const;
  bool has(const std::string& name) const;
  void add(const std::string& name, Tensor init, bool requires_grad = true);
  int64_t total_params() const;
  void set_requires_grad(bool rg);
};

// ----- configurations -----

struct DenoiserConfig {
  int64_t base = 128;
  std::vector<int64_t> mults = {1, 1, 1, 1, 1, 1};
  std::string nonlinearity = "silu";  // "silu" or "relu"
};

struct EncoderConfig {
  int64_t base = 48;
  std::vector<int64_t> mults = {2, 2};  // exactly two strided conv stages
  int64_t latent_dim = 3;
  std::string nonlinearity = "relu";
};

struct ModelConfig {
  int64_t width = 32, height = 32;
  DenoiserConfig denoiser;
  EncoderConfig encoder;
};

// ----- networks -----

struct DenoiserParams {
  DenoiserConfig cfg;
  int64_t width = 0, height = 0;
  ParamStore params;
};

struct EncoderParams {
  EncoderConfig cfg;
  int64_t width = 0, height = 0;
  ParamStore params;
};

// Per-image diagonal Gaussian over the latent space; shapes [B, d].
struct GaussianPosterior {
  Var mean;
  Var variance;  // softplus then square, floored at 1e-12 so log() stays finite
};

// Fan-in-scaled uniform init; every parameter gets its own child stream keyed
// by the parameter name, so adding a layer does not reshuffle the others.
std::pair<DenoiserParams, EncoderParams> init_models(const ModelConfig& cfg, RngStream& rng);
DenoiserParams init_denoiser(const DenoiserConfig& cfg, int64_t width, int64_t height,
                             RngStream& rng);
EncoderParams init_encoder(const EncoderConfig& cfg, int64_t width, int64_t height,
                           RngStream& rng);

// Sinusoidal level embedding of dimension `width`, tiled across rows to form
// one extra input channel.
Tensor time_channel(int64_t t, int64_t width, int64_t height);

// x_t: [B,1,H,W]; t: one level per example (size B) or a single shared level.
// Returns the noise estimate, same shape as x_t.
Var denoise(const DenoiserParams& p, const Var& x_t, const std::vector<int64_t>& t, int64_t T);
Var denoise(const DenoiserParams& p, const Var& x_t, int64_t t, int64_t T);

// x: [B,1,H,W], clean or noisy; the encoder receives no noise-level input.
GaussianPosterior encode(const EncoderParams& p, const Var& x);

}  // namespace sami
