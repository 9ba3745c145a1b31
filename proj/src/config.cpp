#include "sami/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <map>
#include <set>
#include <stdexcept>

namespace sami {

namespace {

// ----- canonical text form -----

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_mults(const std::vector<int64_t>& m) {
  std::string out;
  for (size_t i = 0; i < m.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(m[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

// ----- typed value parsers, line numbers in every complaint -----

[[noreturn]] void bad_line(int64_t line, const std::string& what) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + what);
}

int64_t parse_int(const std::string& v, int64_t line) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    bad_line(line, "expected an integer, got '" + v + "'");
  return (int64_t)x;
}

double parse_double(const std::string& v, int64_t line) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    bad_line(line, "expected a number, got '" + v + "'");
  return x;
}

std::vector<int64_t> parse_mults(const std::string& v, int64_t line) {
  std::vector<int64_t> out;
  size_t start = 0;
  while (start <= v.size()) {
    const size_t comma = v.find(',', start);
    const std::string piece = trim(v.substr(start, comma == std::string::npos
                                                       ? std::string::npos
                                                       : comma - start));
    if (piece.empty()) bad_line(line, "empty entry in multiplier list '" + v + "'");
    out.push_back(parse_int(piece, line));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) bad_line(line, "empty multiplier list");
  return out;
}

}  // namespace

// ----- equality (exact, field by field) -----

bool operator==(const ScheduleConfig& a, const ScheduleConfig& b) {
  return a.kind == b.kind && a.steps == b.steps && a.beta_min == b.beta_min &&
         a.beta_max == b.beta_max;
}
bool operator==(const DataConfig& a, const DataConfig& b) {
  return a.n_train == b.n_train && a.radius == b.radius && a.foreground == b.foreground &&
         a.edge == b.edge;
}
bool operator==(const AnalysisConfig& a, const AnalysisConfig& b) {
  return a.t_ref == b.t_ref && a.probes == b.probes && a.traverse_steps == b.traverse_steps &&
         a.profile_draws == b.profile_draws && a.profile_levels == b.profile_levels &&
         a.eval_images == b.eval_images;
}
bool operator==(const DenoiserConfig& a, const DenoiserConfig& b) {
  return a.base == b.base && a.mults == b.mults && a.nonlinearity == b.nonlinearity;
}
bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.base == b.base && a.mults == b.mults && a.latent_dim == b.latent_dim &&
         a.nonlinearity == b.nonlinearity;
}
bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.width == b.width && a.height == b.height && a.denoiser == b.denoiser &&
         a.encoder == b.encoder;
}
bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.beta_final == b.beta_final && a.beta_anneal == b.beta_anneal &&
         a.anneal_epochs == b.anneal_epochs && a.lr == b.lr && a.batch == b.batch &&
         a.epochs == b.epochs && a.t_distribution == b.t_distribution && a.mode == b.mode &&
         a.lambda_id == b.lambda_id && a.guidance_sign == b.guidance_sign &&
         a.microbatch == b.microbatch;
}
bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.model == b.model && a.schedule == b.schedule && a.training == b.training &&
         a.data == b.data && a.analysis == b.analysis;
}

// ----- print -----

std::string print_config(const RunConfig& c) {
  std::string o;
  o += "[model]\n";
  o += "width = " + std::to_string(c.model.width) + "\n";
  o += "height = " + std::to_string(c.model.height) + "\n";
  o += "denoiser_base = " + std::to_string(c.model.denoiser.base) + "\n";
  o += "denoiser_mults = " + fmt_mults(c.model.denoiser.mults) + "\n";
  o += "denoiser_nonlinearity = " + c.model.denoiser.nonlinearity + "\n";
  o += "encoder_base = " + std::to_string(c.model.encoder.base) + "\n";
  o += "encoder_mults = " + fmt_mults(c.model.encoder.mults) + "\n";
  o += "encoder_nonlinearity = " + c.model.encoder.nonlinearity + "\n";
  o += "latent_dim = " + std::to_string(c.model.encoder.latent_dim) + "\n";
  o += "\n[schedule]\n";
  o += "kind = " + c.schedule.kind + "\n";
  o += "steps = " + std::to_string(c.schedule.steps) + "\n";
  o += "beta_min = " + fmt_double(c.schedule.beta_min) + "\n";
  o += "beta_max = " + fmt_double(c.schedule.beta_max) + "\n";
  o += "\n[training]\n";
  o += "kl_weight = " + fmt_double(c.training.beta_final) + "\n";
  o += "kl_anneal = " + c.training.beta_anneal + "\n";
  o += "anneal_epochs = " + std::to_string(c.training.anneal_epochs) + "\n";
  o += "lr = " + fmt_double(c.training.lr) + "\n";
  o += "batch = " + std::to_string(c.training.batch) + "\n";
  o += "microbatch = " + std::to_string(c.training.microbatch) + "\n";
  o += "epochs = " + std::to_string(c.training.epochs) + "\n";
  o += "t_distribution = " + c.training.t_distribution + "\n";
  o += "mode = " + c.training.mode + "\n";
  o += "lambda = " + c.training.lambda_id + "\n";
  o += "guidance_sign = " + c.training.guidance_sign + "\n";
  o += "\n[data]\n";
  o += "n_train = " + std::to_string(c.data.n_train) + "\n";
  o += "radius = " + fmt_double(c.data.radius) + "\n";
  o += "foreground = " + fmt_double(c.data.foreground) + "\n";
  o += "edge = " + fmt_double(c.data.edge) + "\n";
  o += "\n[analysis]\n";
  o += "t_ref = " + std::to_string(c.analysis.t_ref) + "\n";
  o += "probes = " + std::to_string(c.analysis.probes) + "\n";
  o += "traverse_steps = " + std::to_string(c.analysis.traverse_steps) + "\n";
  o += "profile_draws = " + std::to_string(c.analysis.profile_draws) + "\n";
  o += "profile_levels = " + std::to_string(c.analysis.profile_levels) + "\n";
  o += "eval_images = " + std::to_string(c.analysis.eval_images) + "\n";
  return o;
}

// ----- parse -----

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  const std::set<std::string> sections = {"model", "schedule", "training", "data", "analysis"};
  std::string section;
  std::set<std::string> seen;  // section.key, duplicates rejected
  int64_t line_no = 0;

  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string raw =
        text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;

    if (line.front() == '[') {
      if (line.back() != ']') bad_line(line_no, "unterminated section header '" + line + "'");
      section = line.substr(1, line.size() - 2);
      if (!sections.count(section)) bad_line(line_no, "unknown section [" + section + "]");
      continue;
    }

    const size_t eq = line.find('=');
    if (eq == std::string::npos) bad_line(line_no, "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) bad_line(line_no, "empty key");
    if (section.empty()) bad_line(line_no, "key '" + key + "' before any section header");
    if (!seen.insert(section + "." + key).second)
      bad_line(line_no, "duplicate key '" + key + "' in [" + section + "]");

    const int64_t ln = line_no;
    if (section == "model") {
      if (key == "width") c.model.width = parse_int(val, ln);
      else if (key == "height") c.model.height = parse_int(val, ln);
      else if (key == "denoiser_base") c.model.denoiser.base = parse_int(val, ln);
      else if (key == "denoiser_mults") c.model.denoiser.mults = parse_mults(val, ln);
      else if (key == "denoiser_nonlinearity") c.model.denoiser.nonlinearity = val;
      else if (key == "encoder_base") c.model.encoder.base = parse_int(val, ln);
      else if (key == "encoder_mults") c.model.encoder.mults = parse_mults(val, ln);
      else if (key == "encoder_nonlinearity") c.model.encoder.nonlinearity = val;
      else if (key == "latent_dim") c.model.encoder.latent_dim = parse_int(val, ln);
      else bad_line(ln, "unknown key '" + key + "' in [model]");
    } else if (section == "schedule") {
      if (key == "kind") c.schedule.kind = val;
      else if (key == "steps") c.schedule.steps = parse_int(val, ln);
      else if (key == "beta_min") c.schedule.beta_min = parse_double(val, ln);
      else if (key == "beta_max") c.schedule.beta_max = parse_double(val, ln);
      else bad_line(ln, "unknown key '" + key + "' in [schedule]");
    } else if (section == "training") {
      if (key == "kl_weight") c.training.beta_final = parse_double(val, ln);
      else if (key == "kl_anneal") c.training.beta_anneal = val;
      else if (key == "anneal_epochs") c.training.anneal_epochs = parse_int(val, ln);
      else if (key == "lr") c.training.lr = parse_double(val, ln);
      else if (key == "batch") c.training.batch = parse_int(val, ln);
      else if (key == "microbatch") c.training.microbatch = parse_int(val, ln);
      else if (key == "epochs") c.training.epochs = parse_int(val, ln);
      else if (key == "t_distribution") c.training.t_distribution = val;
      else if (key == "mode") c.training.mode = val;
      else if (key == "lambda") c.training.lambda_id = val;
      else if (key == "guidance_sign") c.training.guidance_sign = val;
      else bad_line(ln, "unknown key '" + key + "' in [training]");
    } else if (section == "data") {
      if (key == "n_train") c.data.n_train = parse_int(val, ln);
      else if (key == "radius") c.data.radius = parse_double(val, ln);
      else if (key == "foreground") c.data.foreground = parse_double(val, ln);
      else if (key == "edge") c.data.edge = parse_double(val, ln);
      else bad_line(ln, "unknown key '" + key + "' in [data]");
    } else {  // analysis
      if (key == "t_ref") c.analysis.t_ref = parse_int(val, ln);
      else if (key == "probes") c.analysis.probes = parse_int(val, ln);
      else if (key == "traverse_steps") c.analysis.traverse_steps = parse_int(val, ln);
      else if (key == "profile_draws") c.analysis.profile_draws = parse_int(val, ln);
      else if (key == "profile_levels") c.analysis.profile_levels = parse_int(val, ln);
      else if (key == "eval_images") c.analysis.eval_images = parse_int(val, ln);
      else bad_line(ln, "unknown key '" + key + "' in [analysis]");
    }
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
  std::fclose(f);
  return parse_config(text);
}

// ----- hashing and derived objects -----

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fnv1a64(print_config(c)));
  return buf;
}

NoiseSchedule schedule_from(const ScheduleConfig& c) {
  return build_schedule(c.kind, c.steps, c.beta_min, c.beta_max);
}

DiskConfig disk_config_from(const RunConfig& c) {
  DiskConfig d;
  d.width = c.model.width;
  d.height = c.model.height;
  d.radius = c.data.radius;
  d.foreground = c.data.foreground;
  d.edge = c.data.edge;
  return d;
}

void journal_append(const std::string& path, const std::string& command,
                    const std::string& cfg_hash, uint64_t seed,
                    const std::vector<std::string>& outputs) {
  std::string line = command + "\t" + cfg_hash + "\t" + std::to_string(seed) + "\t";
  for (size_t i = 0; i < outputs.size(); ++i) {
    if (i) line += ';';
    line += outputs[i];
  }
  line += '\n';
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw std::runtime_error("cannot open run journal " + path);
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write to run journal " + path);
}

}  // namespace sami
