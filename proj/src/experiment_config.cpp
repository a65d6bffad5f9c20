// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/experiment_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bitdiff/errors.hpp"

namespace bitdiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"data.generator", "cyclic_markov"},
      {"data.vocab", "8"},
      {"data.length", "4"},
      {"data.stay", "0.9"},
      {"data.initial", ""},
      {"data.transition", ""},
      {"data.support", ""},
      {"data.dataset", ""},
      {"data.dataset_size", "10000"},
      {"diffusion.sigma_min", "0.002"},
      {"diffusion.sigma_max", "80"},
      {"diffusion.sigma_data", "0.5"},
      {"diffusion.data_center", "0.5"},
      {"diffusion.logit_clip", "30"},
      {"diffusion.rho", "7"},
      {"net.blocks", "2"},
      {"net.width", "64"},
      {"net.heads", "4"},
      {"net.ff_width", "256"},
      {"net.head_width", "32"},
      {"net.sc_enabled", "true"},
      {"net.p_sc", "0.5"},
      {"net.positions", "true"},
      {"train.steps", "5000"},
      {"train.batch_size", "64"},
      {"train.learning_rate", "0.0003"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.adam_eps", "1e-08"},
      {"train.weight_decay", "0.01"},
      {"train.warmup_steps", "100"},
      {"train.min_lr_ratio", "0.1"},
      {"train.grad_clip", "1"},
      {"train.checkpoint_every", "1000"},
      {"train.log_every", "10"},
      {"train.eval_batch", "4096"},
      {"schedule.bins", "64"},
      {"schedule.capacity", "8192"},
      {"schedule.gate_c", "0.1"},
      {"schedule.gate_n", "3"},
      {"schedule.alpha", "0.5"},
      {"schedule.eps", "1e-08"},
      {"schedule.p_mean", "-1.2"},
      {"schedule.p_std", "1.2"},
      {"schedule.warmup_steps", "2000"},
      {"schedule.transition_steps", "500"},
      {"schedule.calibration_draws", "8192"},
      {"sampler.nfe", "256"},
      {"sampler.grid", "entropy"},
      {"sampler.method", "euler"},
      {"sampler.s_churn", "0"},
      {"sampler.s_noise", "1.003"},
      {"sampler.window_lo", "0"},
      {"sampler.window_hi", "1"},
      {"sampler.eta", "0"},
      {"sampler.sc_mode", "carry"},
      {"sampler.samples", "2000"},
      {"sampler.batch", "500"},
      {"sweep.s_churn_values", "0 2.5 5 10 20 40"},
      {"sweep.seeds", "2"},
      {"profile.batch", "1"},
      {"profile.tokens", "1024"},
      {"profile.vocab", "65536"},
      {"profile.width", "256"},
      {"profile.reps", "3"},
      {"profile.bytes_per_element", "2"},
      {"output.dir", "out"},
      {"seed.global", "0"},
      {"seed.data", "auto"},
      {"seed.init", "auto"},
      {"seed.train", "auto"},
      {"seed.sample", "auto"},
  };
  return table;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig::ExperimentConfig() : entries_(defaults()) {}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (section.empty() && key.find('.') == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": key outside a section");
    }
    cfg.set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = trim(value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

bool ExperimentConfig::has(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return true;
  }
  return false;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  throw ConfigError("unknown config key: " + key);
}

double ExperimentConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("config key " + key + " expects a number, got '" + v + "'");
  }
}

std::uint64_t ExperimentConfig::get_count(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("config key " + key + " expects a non-negative integer, got '" + v + "'");
  }
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " expects a boolean, got '" + v + "'");
}

std::vector<double> ExperimentConfig::get_list(const std::string& key) const {
  std::string v = get(key);
  for (auto& c : v) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(v);
  std::vector<double> out;
  std::string item;
  while (in >> item) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw ConfigError("config key " + key + " expects a list of numbers");
    }
  }
  return out;
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [k, v] : entries_) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << k.substr(dot + 1) << " = " << v << '\n';
  }
  return out.str();
}

// The output location is not part of the experiment, so it is left out.
std::string ExperimentConfig::digest() const {
  ExperimentConfig content = *this;
  content.set("output.dir", "");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(content.canonical())));
  return buf;
}

ToyDistribution ExperimentConfig::distribution() const {
  std::ostringstream text;
  text << "generator = " << get("data.generator") << '\n';
  text << "vocab = " << get("data.vocab") << '\n';
  text << "length = " << get("data.length") << '\n';
  for (const char* key : {"stay", "initial", "transition", "support"}) {
    const auto& v = get(std::string("data.") + key);
    if (!v.empty()) text << key << " = " << v << '\n';
  }
  try {
    return ToyDistribution::parse(text.str());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid data section: ") + e.what());
  }
}

DiffusionSpec ExperimentConfig::diffusion() const {
  DiffusionSpec s;
  s.sigma_min = get_double("diffusion.sigma_min");
  s.sigma_max = get_double("diffusion.sigma_max");
  s.sigma_data = get_double("diffusion.sigma_data");
  s.data_center = get_double("diffusion.data_center");
  s.logit_clip = get_double("diffusion.logit_clip");
  s.rho = get_double("diffusion.rho");
  try {
    s.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid diffusion section: ") + e.what());
  }
  return s;
}

NetConfig ExperimentConfig::net(const VocabSpec& vocab) const {
  NetConfig n;
  n.blocks = get_count("net.blocks");
  n.width = get_count("net.width");
  n.heads = get_count("net.heads");
  n.ff_width = get_count("net.ff_width");
  n.head_width = get_count("net.head_width");
  n.patch_size = vocab.bits;
  n.sc_enabled = get_bool("net.sc_enabled");
  n.p_sc = get_double("net.p_sc");
  n.positions = get_bool("net.positions");
  n.validate();
  return n;
}

TrainConfig ExperimentConfig::train(std::uint64_t seed) const {
  TrainConfig t;
  t.steps = get_count("train.steps");
  t.batch_size = get_count("train.batch_size");
  t.learning_rate = get_double("train.learning_rate");
  t.beta1 = get_double("train.beta1");
  t.beta2 = get_double("train.beta2");
  t.adam_eps = get_double("train.adam_eps");
  t.weight_decay = get_double("train.weight_decay");
  t.warmup_steps = get_count("train.warmup_steps");
  t.min_lr_ratio = get_double("train.min_lr_ratio");
  t.grad_clip = get_double("train.grad_clip");
  t.seed = seed;
  t.validate();
  return t;
}

ScheduleConfig ExperimentConfig::schedule() const {
  ScheduleConfig c = ScheduleConfig::from_spec(diffusion());
  c.bins = get_count("schedule.bins");
  c.capacity = get_count("schedule.capacity");
  c.gate_c = get_double("schedule.gate_c");
  c.gate_n = get_double("schedule.gate_n");
  c.alpha = get_double("schedule.alpha");
  c.eps = get_double("schedule.eps");
  c.p_mean = get_double("schedule.p_mean");
  c.p_std = get_double("schedule.p_std");
  c.warmup_steps = get_count("schedule.warmup_steps");
  c.transition_steps = get_count("schedule.transition_steps");
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid schedule section: ") + e.what());
  }
  return c;
}

SamplerConfig ExperimentConfig::sampler(std::uint64_t seed) const {
  SamplerConfig s;
  s.nfe = get_count("sampler.nfe");
  s.grid = parse_grid_kind(get("sampler.grid"));
  s.method = parse_step_method(get("sampler.method"));
  s.s_churn = get_double("sampler.s_churn");
  s.s_noise = get_double("sampler.s_noise");
  s.window_lo = get_double("sampler.window_lo");
  s.window_hi = get_double("sampler.window_hi");
  s.eta = get_double("sampler.eta");
  s.sc_mode = parse_sc_mode(get("sampler.sc_mode"));
  s.seed = seed;
  try {
    s.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid sampler section: ") + e.what());
  }
  return s;
}

Seeds ExperimentConfig::seeds() const {
  Seeds s;
  s.global = get_count("seed.global");
  auto resolve = [&](const char* key, std::uint64_t stream) {
    const auto& v = get(std::string("seed.") + key);
    return v == "auto" ? derive_seed(s.global, stream) : get_count(std::string("seed.") + key);
  };
  s.data = resolve("data", 11);
  s.init = resolve("init", 12);
  s.train = resolve("train", 13);
  s.sample = resolve("sample", 14);
  return s;
}

std::string ExperimentConfig::output_dir() const { return get("output.dir"); }

ScheduleState calibrate_schedule(const ToyDistribution& dist, const ScheduleConfig& config,
                                 const DiffusionSpec& spec, std::size_t draws, Rng& rng) {
  ScheduleState state(config);
  const double lo = std::log(spec.sigma_min), hi = std::log(spec.sigma_max);
  for (std::size_t i = 0; i < draws; ++i) {
    const double sigma = std::exp(lo + (hi - lo) * rng.uniform());
    const auto x0 = encode(dist.sample(rng), dist.vocab());
    std::vector<double> x(x0.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = x0.values[j] + sigma * rng.normal();
    const auto denoised = exact_denoiser(x, sigma, dist);
    double err = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      err += (denoised[j] - x0.values[j]) * (denoised[j] - x0.values[j]);
    }
    state.record(sigma, err / static_cast<double>(x.size()));
  }
  return state;
}

std::vector<TokenSequence> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open dataset " + path);
  std::vector<TokenSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream items(line);
    TokenSequence seq;
    long long id = 0;
    while (items >> id) {
      if (id < 0) throw ConfigError("negative token id in dataset " + path);
      seq.push_back(static_cast<TokenId>(id));
    }
    if (!items.eof()) throw ConfigError("malformed dataset line: " + line);
    out.push_back(std::move(seq));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<TokenSequence>& data) {
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write " + path);
  for (const auto& seq : data) {
    for (std::size_t t = 0; t < seq.size(); ++t) out << (t ? " " : "") << seq[t];
    out << '\n';
  }
}

}  // namespace bitdiff
