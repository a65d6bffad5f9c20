// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a sectioned plain-text file of `key = value`
// lines. Every key has a default, unknown keys are rejected, and the
// canonical rendering (fixed section and key order) is hashed into a digest
// that identifies a run.
//
//   [data]
//   generator = cyclic_markov
//   vocab = 8
//   ...
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/oracle.hpp"
#include "bitdiff/residual_net.hpp"
#include "bitdiff/sampler.hpp"
#include "bitdiff/schedule.hpp"
#include "bitdiff/trainer.hpp"

namespace bitdiff {

struct Seeds {
  std::uint64_t global = 0;
  std::uint64_t data = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t sample = 0;
};

class ExperimentConfig {
 public:
  ExperimentConfig();

  /// Throws MissingFileError if unreadable, ConfigError if malformed.
  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_text(const std::string& text);

  /// Dotted key such as "sampler.nfe". Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  /// "section.key=value".
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;

  double get_double(const std::string& key) const;
  std::uint64_t get_count(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  std::string canonical() const;
  /// FNV-1a 64 of the canonical text, 16 hex digits.
  std::string digest() const;

  ToyDistribution distribution() const;
  DiffusionSpec diffusion() const;
  NetConfig net(const VocabSpec& vocab) const;
  TrainConfig train(std::uint64_t seed) const;
  ScheduleConfig schedule() const;
  SamplerConfig sampler(std::uint64_t seed) const;
  /// Global seed fanned out to substreams; "auto" entries are derived.
  Seeds seeds() const;
  std::string output_dir() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;  // declaration order
};

std::uint64_t fnv1a64(const std::string& text);

/// Fills a schedule with exact-denoiser errors at log-uniform noise levels,
/// the oracle stand-in for training-time records.
ScheduleState calibrate_schedule(const ToyDistribution& dist, const ScheduleConfig& config,
                                 const DiffusionSpec& spec, std::size_t draws, Rng& rng);

/// One whitespace-separated sequence per line.
std::vector<TokenSequence> read_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<TokenSequence>& data);

}  // namespace bitdiff
