// SPDX-License-Identifier: Apache-2.0
//
// Vocabulary-boundary accounting: analytic logit counts for a token head
// (B T V) against a bit head (B T ceil(log2 V)), and an isolated timing of
// the two boundary computations on synthetic trunk activations.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bitdiff {

struct BoundaryCase {
  std::string label;
  std::uint64_t batch = 1;
  std::uint64_t tokens = 1;
  std::uint64_t vocab = 2;
  std::uint64_t width = 768;
  std::uint64_t bytes_per_element = 2;

  void validate() const;
};

struct LogitCounts {
  std::uint64_t token_logits = 0;
  std::uint64_t bit_logits = 0;
  std::uint32_t bits = 0;
  double reduction_exact = 0.0;   // V / m
  std::uint64_t reduction = 0;    // nearest integer
  std::uint64_t token_bytes = 0;
  std::uint64_t bit_bytes = 0;
};

LogitCounts logit_counts(const BoundaryCase& c);

/// The six settings of the published analytic table.
std::vector<BoundaryCase> reference_logit_cases();

/// Mantissa with three significant digits, e.g. "2.00e9".
std::string format_count(std::uint64_t count);

std::string logit_table_markdown(const std::vector<BoundaryCase>& cases);
std::string logit_table_csv(const std::vector<BoundaryCase>& cases);

enum class BoundaryKind { token, bitstream };

const char* boundary_name(BoundaryKind kind);

struct BenchResult {
  BoundaryKind kind = BoundaryKind::token;
  std::size_t reps = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::uint64_t boundary_bytes = 0;  // analytic size of the logit tensor
  double checksum = 0.0;             // last loss value, keeps the work observable
  bool ok = true;
  std::string error;                 // set when allocation failed
};

/// Times `reps` forward boundary steps after one warmup step. Token:
/// dense d -> V projection and cross-entropy against random targets.
/// Bitstream: d -> m projection, sigmoid and squared loss against random
/// bits. Allocation failure is reported in the result.
BenchResult micro_bench(const BoundaryCase& c, BoundaryKind kind, std::size_t reps,
                        std::uint64_t seed = 0);

std::string bench_table_markdown(const std::vector<std::pair<BoundaryCase, BenchResult>>& rows);

}  // namespace bitdiff
