#include "sami/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sami/analysis.hpp"
#include "sami/checkpoint.hpp"
#include "sami/config.hpp"
#include "sami/data.hpp"
#include "sami/diffusion.hpp"
#include "sami/guidance.hpp"
#include "sami/image_io.hpp"
#include "sami/oracle.hpp"

namespace sami {

namespace {

// A post-parse complaint about how the tool was invoked (exit code 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ----- shared plumbing -----

std::string journal_path_for(const std::string& out) {
  const std::filesystem::path dir = std::filesystem::path(out).parent_path();
  return (dir.empty() ? std::filesystem::path("run_journal.tsv")
                      : dir / "run_journal.tsv")
      .string();
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

// Checkpoint-bearing commands take their model and schedule sections from
// the checkpoint echo; a --config on top must agree on those sections and
// then supplies the training/data/analysis sections.
RunConfig merge_config(const LoadedCheckpoint& lc, const std::string& cfg_path) {
  if (cfg_path.empty()) return lc.config;
  RunConfig cli_cfg = load_config(cfg_path);
  if (!(cli_cfg.model == lc.config.model))
    throw std::runtime_error("--config [model] disagrees with the checkpoint");
  if (!(cli_cfg.schedule == lc.config.schedule))
    throw std::runtime_error("--config [schedule] disagrees with the checkpoint");
  return cli_cfg;
}

void write_text_atomic(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
  const bool ok = std::fwrite(body.data(), 1, body.size(), f) == body.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write to " + tmp);
  std::filesystem::rename(tmp, path);
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

GuidanceMask parse_mask(const std::string& text, int64_t d) {
  if (text.empty()) return GuidanceMask::full(d);
  GuidanceMask m;
  size_t start = 0;
  while (start <= text.size()) {
    const size_t comma = text.find(',', start);
    const std::string piece =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (piece == "1") m.active.push_back(1);
    else if (piece == "0") m.active.push_back(0);
    else throw UsageError("--mask entries must be 0 or 1, got '" + piece + "'");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if ((int64_t)m.active.size() != d)
    throw UsageError("--mask has " + std::to_string(m.active.size()) + " entries, latent dim is " +
                     std::to_string(d));
  return m;
}

CoefficientRule parse_rule(const std::string& name) {
  if (name == "derived") return CoefficientRule::derived;
  if (name == "algorithm") return CoefficientRule::algorithm;
  throw UsageError("--coefficient-rule must be derived or algorithm, got '" + name + "'");
}

Condition load_condition(const std::string& path, int64_t d) {
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".pgm") return Condition{Condition::Kind::image, read_pgm(path)};
  // anything else is a whitespace/comma separated latent vector
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open condition file " + path);
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
  std::fclose(f);
  for (char& ch : text)
    if (ch == ',' || ch == '\n' || ch == '\t' || ch == '\r') ch = ' ';
  std::vector<double> vals;
  const char* p = text.c_str();
  while (*p) {
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p) {
      if (*p == ' ') {
        ++p;
        continue;
      }
      throw std::runtime_error("condition file " + path + " has non-numeric content");
    }
    vals.push_back(v);
    p = end;
  }
  if ((int64_t)vals.size() != d)
    throw std::runtime_error("condition file " + path + " holds " +
                             std::to_string(vals.size()) + " values, latent dim is " +
                             std::to_string(d));
  return Condition{Condition::Kind::latent, Tensor::from({d}, std::move(vals))};
}

// Posterior means and variances of a dataset, encoded in fixed-size chunks
// so activation memory stays bounded. Level 0 encodes the clean images; a
// positive level draws one noise tensor for the whole dataset first.
std::pair<Tensor, Tensor> encode_dataset(const EncoderParams& enc, const Tensor& images,
                                         int64_t level, const NoiseSchedule& sched,
                                         RngStream& rng) {
  Tensor x = images;
  if (level != 0) {
    sched.check_level(level);
    const Tensor eps = rng.normal_tensor(images.shape);
    x = forward_noise(images, level, eps, sched);
  }
  const int64_t n = x.shape[0], d = enc.cfg.latent_dim, chunk = 256;
  const int64_t hw = x.shape[2] * x.shape[3];
  Tensor means = Tensor::zeros({n, d}), vars = Tensor::zeros({n, d});
  for (int64_t at = 0; at < n; at += chunk) {
    const int64_t b = std::min(chunk, n - at);
    Tensor part = Tensor::zeros({b, 1, x.shape[2], x.shape[3]});
    std::copy(x.data.begin() + at * hw, x.data.begin() + (at + b) * hw, part.data.begin());
    const GaussianPosterior post = encode(enc, constant(part));
    std::copy(post.mean.val().data.begin(), post.mean.val().data.end(),
              means.data.begin() + at * d);
    std::copy(post.variance.val().data.begin(), post.variance.val().data.end(),
              vars.data.begin() + at * d);
  }
  return {means, vars};
}

std::vector<std::string> axis_names(const std::string& prefix, int64_t d) {
  std::vector<std::string> out;
  for (int64_t j = 0; j < d; ++j) out.push_back(prefix + std::to_string(j));
  return out;
}

// ----- subcommand options -----

struct Opts {
  std::string config, out, data, ckpt, init_denoiser, condition, mask, log, from, to, metric;
  std::string rule = "derived";
  uint64_t seed = 0;
  int64_t n = 16, level = 0;
};

// ----- subcommands -----

int cmd_gen_data(const Opts& o) {
  const RunConfig cfg = config_or_default(o.config);
  RngStream rng(o.seed);
  const DiskDataset ds = generate_dataset(cfg.data.n_train, rng, disk_config_from(cfg));
  write_dataset(ds, o.out);
  journal_append(journal_path_for(o.out), "gen-data", config_hash(cfg), o.seed, {o.out});
  std::printf("wrote %lld images to %s\n", (long long)cfg.data.n_train, o.out.c_str());
  return 0;
}

int cmd_train(const Opts& o) {
  const RunConfig cfg = config_or_default(o.config);
  const DiskDataset ds = read_dataset(o.data);
  RngStream rng(o.seed);
  auto [den, enc] = init_models(cfg.model, rng);
  ModelBundle bundle{std::move(den), std::move(enc), schedule_from(cfg.schedule), cfg.model};

  if (!o.init_denoiser.empty()) {
    const LoadedCheckpoint lc = load_checkpoint(o.init_denoiser);
    if (!(lc.bundle.den.cfg == bundle.den.cfg) || lc.bundle.den.width != bundle.den.width ||
        lc.bundle.den.height != bundle.den.height)
      throw std::runtime_error("--init-denoiser checkpoint architecture does not match config");
    for (size_t i = 0; i < bundle.den.params.items.size(); ++i)
      bundle.den.params.items[i].second.n->value = lc.bundle.den.params.items[i].second.val();
  }

  const RunLog log = train(bundle, ds.images, cfg.training, rng);
  save_checkpoint(bundle, cfg, o.out);
  const std::string log_path = o.out + ".log.csv";
  write_run_log_csv(log, log_path);
  journal_append(journal_path_for(o.out), "train", config_hash(cfg), o.seed, {o.out, log_path});
  std::printf("trained %lld steps, final loss %.6g, checkpoint %s\n",
              (long long)log.records.size(),
              log.records.empty() ? 0.0 : log.records.back().loss, o.out.c_str());
  return 0;
}

int cmd_sample(const Opts& o) {
  if (o.n < 1) throw UsageError("--n must be at least 1");
  const LoadedCheckpoint lc = load_checkpoint(o.ckpt);
  const RunConfig cfg = merge_config(lc, o.config);
  const int64_t d = lc.bundle.enc.cfg.latent_dim;
  RngStream rng(o.seed);
  RunLog log;

  // sampled images live in the pgm pixel window, so chains clip there
  const std::optional<ClipWindow> clip = ClipWindow{0.0, 1.0};
  Tensor samples;
  if (o.condition.empty()) {
    samples = sample_unconditional(lc.bundle.den, lc.bundle.sched, rng, o.n, &log, clip);
  } else {
    const Condition cond = load_condition(o.condition, d);
    const GuidanceMask mask = parse_mask(o.mask, d);
    samples = sample_conditional(lc.bundle, cond, mask, rng, o.n, parse_rule(o.rule), &log, clip);
  }

  const int64_t cols = (int64_t)std::ceil(std::sqrt((double)o.n));
  const int64_t rows = (o.n + cols - 1) / cols;
  write_image_grid(samples, rows, cols, o.out);
  std::vector<std::string> outputs = {o.out};
  if (!o.log.empty()) {
    write_run_log_csv(log, o.log);
    outputs.push_back(o.log);
  }
  journal_append(journal_path_for(o.out), "sample", config_hash(cfg), o.seed, outputs);
  std::printf("wrote %lld samples to %s\n", (long long)o.n, o.out.c_str());
  return 0;
}

int cmd_encode(const Opts& o) {
  const LoadedCheckpoint lc = load_checkpoint(o.ckpt);
  const RunConfig cfg = merge_config(lc, o.config);
  const DiskDataset ds = read_dataset(o.data);
  RngStream rng(o.seed);
  const auto [means, vars] =
      encode_dataset(lc.bundle.enc, ds.images, o.level, lc.bundle.sched, rng);

  const int64_t n = means.shape[0], d = means.shape[1];
  Tensor table = Tensor::zeros({n, 2 * d + 3});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      table.data[i * (2 * d + 3) + j] = means.data[i * d + j];
      table.data[i * (2 * d + 3) + d + j] = vars.data[i * d + j];
    }
    table.data[i * (2 * d + 3) + 2 * d + 0] = ds.factors[i].c_x;
    table.data[i * (2 * d + 3) + 2 * d + 1] = ds.factors[i].c_y;
    table.data[i * (2 * d + 3) + 2 * d + 2] = ds.factors[i].i_bg;
  }
  std::vector<std::string> cols = axis_names("mean_", d);
  for (const std::string& v : axis_names("var_", d)) cols.push_back(v);
  cols.push_back("c_x");
  cols.push_back("c_y");
  cols.push_back("i_bg");
  write_matrix_csv(table, cols, o.out);
  journal_append(journal_path_for(o.out), "encode", config_hash(cfg), o.seed, {o.out});
  std::printf("encoded %lld images at level %lld to %s\n", (long long)n, (long long)o.level,
              o.out.c_str());
  return 0;
}

int cmd_traverse(const Opts& o) {
  const LoadedCheckpoint lc = load_checkpoint(o.ckpt);
  const RunConfig cfg = merge_config(lc, o.config);
  const int64_t d = lc.bundle.enc.cfg.latent_dim;
  const int64_t steps = cfg.analysis.traverse_steps;
  RngStream rng(o.seed);

  const auto endpoint = [&](const std::string& path) {
    const Tensor img = read_pgm(path);
    const Tensor mu = encode(lc.bundle.enc, constant(img)).mean.val();  // [1,d]
    return Tensor::from({d}, std::vector<double>(mu.data.begin(), mu.data.end()));
  };
  const Tensor za = endpoint(o.from), zb = endpoint(o.to);
  const Tensor zs = latent_traverse(za, zb, steps);

  const int64_t h = lc.bundle.model_cfg.height, w = lc.bundle.model_cfg.width;
  Tensor frames = Tensor::zeros({steps, 1, h, w});
  for (int64_t s = 0; s < steps; ++s) {
    Condition cond{Condition::Kind::latent,
                   Tensor::from({d}, std::vector<double>(zs.data.begin() + s * d,
                                                         zs.data.begin() + (s + 1) * d))};
    const Tensor img = sample_conditional(lc.bundle, cond, GuidanceMask::full(d), rng, 1,
                                          CoefficientRule::derived, nullptr,
                                          ClipWindow{0.0, 1.0});
    std::copy(img.data.begin(), img.data.end(), frames.data.begin() + s * h * w);
  }
  write_image_grid(frames, 1, steps, o.out);
  journal_append(journal_path_for(o.out), "traverse", config_hash(cfg), o.seed, {o.out});
  std::printf("wrote %lld traversal frames to %s\n", (long long)steps, o.out.c_str());
  return 0;
}

int cmd_analyze(const Opts& o) {
  const LoadedCheckpoint lc = load_checkpoint(o.ckpt);
  const RunConfig cfg = merge_config(lc, o.config);
  const EncoderParams& enc = lc.bundle.enc;
  const NoiseSchedule& sched = lc.bundle.sched;
  const int64_t d = enc.cfg.latent_dim;
  RngStream rng(o.seed);

  const auto need_data = [&]() {
    if (o.data.empty()) throw UsageError("--data is required for metric '" + o.metric + "'");
    return read_dataset(o.data);
  };
  const auto head_images = [&](const DiskDataset& ds) {
    const int64_t n = std::min<int64_t>(cfg.analysis.eval_images, ds.images.shape[0]);
    Tensor out = Tensor::zeros({n, 1, ds.images.shape[2], ds.images.shape[3]});
    std::copy(ds.images.data.begin(), ds.images.data.begin() + out.numel(), out.data.begin());
    return out;
  };

  if (o.metric == "variability") {
    const DiskDataset ds = need_data();
    write_matrix_csv(Tensor::from({1, 1}, {variability(ds.images)}), {"variability"}, o.out);
  } else if (o.metric == "variance-profile") {
    const DiskDataset ds = need_data();
    const Tensor imgs = head_images(ds);
    const int64_t nl = cfg.analysis.profile_levels;
    std::vector<int64_t> levels;
    for (int64_t k = 0; k < nl; ++k)
      levels.push_back((int64_t)std::llround((double)k * (double)(sched.T - 1) /
                                             (double)(nl - 1)));
    const Tensor prof =
        posterior_variance_profile(enc, imgs, sched, levels, rng, cfg.analysis.profile_draws);
    Tensor table = Tensor::zeros({nl, d + 1});
    for (int64_t r = 0; r < nl; ++r) {
      table.data[r * (d + 1)] = (double)levels[r];
      for (int64_t j = 0; j < d; ++j) table.data[r * (d + 1) + 1 + j] = prof.data[r * d + j];
    }
    std::vector<std::string> cols = {"level"};
    for (const std::string& v : axis_names("axis_", d)) cols.push_back(v);
    write_matrix_csv(table, cols, o.out);
  } else if (o.metric == "coherence") {
    const DiskDataset ds = need_data();
    const AxisReport rep = global_coherence(enc, head_images(ds), cfg.analysis.t_ref, sched, rng);
    Tensor table = Tensor::zeros({d, 4});
    for (int64_t j = 0; j < d; ++j) {
      table.data[j * 4 + 0] = rep.pop_var_mu.data[j];
      table.data[j * 4 + 1] = rep.mean_var.data[j];
      table.data[j * 4 + 2] = rep.sens_norm.data[j];
      table.data[j * 4 + 3] = rep.coherence.data[j];
    }
    write_matrix_csv(table, {"pop_var_mu", "mean_var", "sens_norm", "coherence"}, o.out);
  } else if (o.metric == "straightness") {
    const Sequence seq = generate_sequence("linear-drift", 8, rng, disk_config_from(cfg));
    Tensor pts = Tensor::zeros({(int64_t)seq.frames.size(), d});
    for (size_t i = 0; i < seq.frames.size(); ++i) {
      const Tensor mu = encode(enc, constant(seq.frames[i])).mean.val();
      std::copy(mu.data.begin(), mu.data.end(), pts.data.begin() + (int64_t)i * d);
    }
    const StraightnessReport rep = straightness(pts);
    Tensor table = Tensor::zeros({(int64_t)rep.cosines.size() + 1, 2});
    for (size_t i = 0; i < rep.cosines.size(); ++i) {
      table.data[i * 2] = (double)i;
      table.data[i * 2 + 1] = rep.cosines[i];
    }
    table.data[rep.cosines.size() * 2] = -1.0;  // trailing mean row
    table.data[rep.cosines.size() * 2 + 1] = rep.mean;
    write_matrix_csv(table, {"index", "cosine"}, o.out);
  } else if (o.metric == "pr") {
    const DiskDataset ds = need_data();
    const auto [means, vars] = encode_dataset(enc, head_images(ds), 0, sched, rng);
    (void)vars;
    const int64_t n = means.shape[0];
    Tensor w = Tensor::zeros({d});
    for (int64_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (int64_t i = 0; i < n; ++i) m += means.data[i * d + j];
      m /= (double)n;
      double v = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double r = means.data[i * d + j] - m;
        v += r * r;
      }
      w.data[j] = v / (double)n;
    }
    write_matrix_csv(Tensor::from({1, 1}, {participation_ratio(w)}), {"participation_ratio"},
                     o.out);
  } else if (o.metric == "score-profile") {
    if (o.log.empty()) throw UsageError("--log is required for metric 'score-profile'");
    write_score_profile_csv(score_magnitude_profile(read_run_log_csv(o.log)), o.out);
  } else if (o.metric == "smoothness") {
    const DiskDataset ds = need_data();
    const SmoothnessReport rep =
        smoothness_probe(enc, head_images(ds), cfg.analysis.probes, rng);
    write_matrix_csv(Tensor::from({1, 2}, {rep.jacobian_energy, rep.hessian_energy}),
                     {"jacobian_energy", "hessian_energy"}, o.out);
  } else {  // alignment
    const DiskDataset ds = need_data();
    const auto [means, vars] = encode_dataset(enc, ds.images, 0, sched, rng);
    (void)vars;
    const int64_t n = means.shape[0];
    Tensor factors = Tensor::zeros({n, 3});
    for (int64_t i = 0; i < n; ++i) {
      factors.data[i * 3 + 0] = ds.factors[i].c_x;
      factors.data[i * 3 + 1] = ds.factors[i].c_y;
      factors.data[i * 3 + 2] = ds.factors[i].i_bg;
    }
    const AlignmentReport rep = factor_alignment(means, factors);
    write_matrix_csv(rep.r2, axis_names("axis_", d), o.out);
    std::printf("best axes: c_x=%lld c_y=%lld i_bg=%lld (%s)\n", (long long)rep.best_axis[0],
                (long long)rep.best_axis[1], (long long)rep.best_axis[2],
                rep.distinct_axes ? "distinct" : "overlapping");
  }

  journal_append(journal_path_for(o.out), "analyze", config_hash(cfg), o.seed, {o.out});
  std::printf("wrote %s report to %s\n", o.metric.c_str(), o.out.c_str());
  return 0;
}

int cmd_oracle_check(const Opts& o) {
  const RunConfig cfg = config_or_default(o.config);
  RngStream rng(o.seed);
  const GaussianWorld world = random_world(rng, 4, 2, 0.1);
  const NoiseSchedule sched = build_schedule("linear", 400);

  // denoiser identity and score decomposition at a spread of levels
  double err_den = 0.0, err_dec = 0.0;
  for (int64_t t : {(int64_t)0, (int64_t)1, (int64_t)137, (int64_t)399}) {
    for (int rep = 0; rep < 5; ++rep) {
      const Tensor x_t = rng.normal_tensor({4});
      const Tensor z = rng.normal_tensor({2});
      const Tensor eps_hat = analytic_denoiser(world, sched, t, x_t);
      const Tensor x0_mean = posterior_x0_given_xt(world, sched, t, x_t).mean;
      const double ab = sched.alpha_bar[t];
      for (int64_t i = 0; i < 4; ++i) {
        const double lhs = eps_hat.data[i];
        const double rhs =
            (x_t.data[i] - std::sqrt(ab) * x0_mean.data[i]) / std::sqrt(1.0 - ab);
        err_den = std::max(err_den, std::abs(lhs - rhs));
      }
      const Tensor cond = conditional_score(world, sched, t, x_t, z);
      const Tensor marg = marginal_score(world, sched, t, x_t);
      const Tensor guide = oracle_guidance(world, sched, t, x_t, z);
      for (int64_t i = 0; i < 4; ++i)
        err_dec = std::max(err_dec,
                           std::abs(cond.data[i] - (marg.data[i] + guide.data[i])));
    }
  }

  // guided ancestral sampling against the closed-form conditional posterior
  const Tensor z_star = Tensor::from({2}, {0.7, -0.4});
  const GaussianDist post = conditional_posterior(world, z_star);
  const int64_t n = 2000;
  const Tensor draws =
      oracle_guided_samples(world, sched, z_star, rng, n, CoefficientRule::derived);
  Tensor mean = Tensor::zeros({4});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < 4; ++j) mean.data[j] += draws.data[i * 4 + j] / (double)n;
  Tensor cov = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t a = 0; a < 4; ++a)
      for (int64_t b = 0; b < 4; ++b)
        cov.data[a * 4 + b] += (draws.data[i * 4 + a] - mean.data[a]) *
                               (draws.data[i * 4 + b] - mean.data[b]) / (double)n;
  const double mean_rel = t_norm2(t_sub(mean, post.mean)) / t_norm2(post.mean);
  const double cov_rel = t_norm2(t_sub(cov, post.cov)) / t_norm2(post.cov);

  std::string body = "metric,value\n";
  body += "denoiser_identity_max_err," + g17(err_den) + "\n";
  body += "score_decomposition_max_err," + g17(err_dec) + "\n";
  body += "guided_mean_rel_err," + g17(mean_rel) + "\n";
  body += "guided_cov_rel_err," + g17(cov_rel) + "\n";
  write_text_atomic(o.out, body);
  journal_append(journal_path_for(o.out), "oracle-check", config_hash(cfg), o.seed, {o.out});

  const bool ok = err_den <= 1e-10 && err_dec <= 1e-10 && mean_rel <= 0.10 && cov_rel <= 0.10;
  std::printf("denoiser identity %.3g, decomposition %.3g, guided mean %.3g, cov %.3g: %s\n",
              err_den, err_dec, mean_rel, cov_rel, ok ? "ok" : "OUT OF TOLERANCE");
  if (!ok) throw std::runtime_error("analytic-world check out of tolerance, see " + o.out);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"score-guided conditional diffusion toolkit"};
  app.require_subcommand(1);
  Opts o;

  const auto common = [&o](CLI::App* sub, bool out_required = true) {
    sub->add_option("--config", o.config, "run configuration file");
    sub->add_option("--seed", o.seed, "random seed (default 0)");
    auto* out = sub->add_option("--out", o.out, "output path");
    if (out_required) out->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "render a procedural disk dataset");
  common(gen);

  CLI::App* train_cmd = app.add_subcommand("train", "fit the model on a dataset");
  common(train_cmd);
  train_cmd->add_option("--data", o.data, "dataset file")->required();
  train_cmd->add_option("--init-denoiser", o.init_denoiser,
                        "checkpoint supplying pretrained denoiser weights");

  CLI::App* sample_cmd = app.add_subcommand("sample", "draw images from the model");
  common(sample_cmd);
  sample_cmd->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
  sample_cmd->add_option("--n", o.n, "number of samples (default 16)");
  sample_cmd->add_option("--condition", o.condition,
                         "conditioning image (.pgm) or latent vector file");
  sample_cmd->add_option("--mask", o.mask, "active latent axes, e.g. 1,0,1");
  sample_cmd->add_option("--coefficient-rule", o.rule, "guided-mean rule: derived|algorithm");
  sample_cmd->add_option("--log", o.log, "write the per-step sampling record here");

  CLI::App* encode_cmd = app.add_subcommand("encode", "posterior statistics for a dataset");
  common(encode_cmd);
  encode_cmd->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
  encode_cmd->add_option("--data", o.data, "dataset file")->required();
  encode_cmd->add_option("--level", o.level, "noise level fed to the encoder (default 0)");

  CLI::App* trav = app.add_subcommand("traverse", "render a latent interpolation strip");
  common(trav);
  trav->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
  trav->add_option("--from", o.from, "first endpoint image (.pgm)")->required();
  trav->add_option("--to", o.to, "second endpoint image (.pgm)")->required();

  CLI::App* ana = app.add_subcommand("analyze", "representation diagnostics");
  common(ana);
  ana->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
  ana->add_option("--metric", o.metric, "which report to produce")
      ->required()
      ->check(CLI::IsMember({"variability", "variance-profile", "coherence", "straightness",
                             "pr", "score-profile", "smoothness", "alignment"}));
  ana->add_option("--data", o.data, "dataset file (metric dependent)");
  ana->add_option("--log", o.log, "sampling record, required for score-profile");

  CLI::App* oracle_cmd =
      app.add_subcommand("oracle-check", "validate sampling against the analytic world");
  common(oracle_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the complaint to stderr
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (train_cmd->parsed()) return cmd_train(o);
    if (sample_cmd->parsed()) return cmd_sample(o);
    if (encode_cmd->parsed()) return cmd_encode(o);
    if (trav->parsed()) return cmd_traverse(o);
    if (ana->parsed()) return cmd_analyze(o);
    return cmd_oracle_check(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace sami
