// SPDX-License-Identifier: Apache-2.0
//
// AdamW training loop for the residual network. Noise levels come from the
// schedule (log-normal during warmup, entropy-rate afterwards) and the
// per-example unweighted errors are fed back into it every step.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/oracle.hpp"
#include "bitdiff/residual_net.hpp"
#include "bitdiff/schedule.hpp"

namespace bitdiff {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;  // linear learning-rate warmup
  double min_lr_ratio = 0.1;       // cosine floor as a fraction of the peak
  double grad_clip = 1.0;          // global norm; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

/// Learning rate at a 0-based step.
double learning_rate_at(const TrainConfig& config, std::size_t step);

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double baseline_loss = 0.0;  // same batch, residual forced to zero
  double unweighted = 0.0;
  double sigma_mean = 0.0;     // geometric mean of the batch noise levels
  double lr = 0.0;
  double grad_norm = 0.0;

  std::string to_json() const;
};

struct TrainResult {
  Parameters params;
  std::vector<TrainRecord> log;
  std::size_t steps_done = 0;
  bool diverged = false;
  std::string message;
};

/// Draws a batch of token sequences.
using BatchSource = std::function<std::vector<TokenSequence>(Rng& rng, std::size_t batch)>;

BatchSource distribution_source(const ToyDistribution& dist);
BatchSource dataset_source(std::vector<TokenSequence> dataset);

/// Runs the optimizer loop from `initial` (fresh parameters seeded from
/// config.seed when null). Non-finite losses stop the loop and set
/// `diverged`; the offending step is the last log entry.
TrainResult train(const BatchSource& source, const VocabSpec& vocab, const NetConfig& net,
                  const TrainConfig& config, ScheduleState& schedule, const DiffusionSpec& spec,
                  const Parameters* initial = nullptr,
                  const std::function<void(const TrainRecord&, const Parameters&)>& on_record = {});

/// Stacks encoded token sequences into one flat bit batch.
std::vector<double> encode_batch(const std::vector<TokenSequence>& batch, const VocabSpec& vocab);

}  // namespace bitdiff
