// SPDX-License-Identifier: Apache-2.0
//
// Sample-quality metrics against an enumerable toy generator.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/oracle.hpp"

namespace bitdiff {

struct SampleSet {
  std::vector<TokenSequence> sequences;
  std::vector<std::size_t> invalid_counts;  // per sequence, empty if unknown
  std::string config_digest;
  std::uint64_t seed = 0;

  std::size_t size() const { return sequences.size(); }
};

/// Decodes batch * S probabilities into a sample set.
SampleSet decode_samples(std::span<const double> probabilities, std::size_t batch,
                         const VocabSpec& vocab);

/// Mean over samples of the Shannon entropy (nats) of each sample's
/// empirical token distribution.
double token_entropy(const SampleSet& samples);

enum class TvLevel { unigram, bigram, full_sequence };

TvLevel parse_tv_level(const std::string& name);
const char* tv_level_name(TvLevel level);

/// Half the L1 distance between empirical and true distributions of the
/// chosen event.
double tv_distance(const SampleSet& samples, const ToyDistribution& dist, TvLevel level);

struct NllResult {
  double nll_per_token = 0.0;  // over scored sequences
  std::size_t scored = 0;
  std::size_t zero_probability = 0;
  std::size_t invalid = 0;  // sequences that held an invalid code
};

/// Mean sequence NLL divided by T. Zero-probability sequences and sequences
/// with invalid codes are left out and counted; throws NumericError if
/// nothing is left to score.
NllResult oracle_nll(const SampleSet& samples, const ToyDistribution& dist);

/// Fraction of positions where threshold(D) differs from the clean bit.
double bit_error_rate(std::span<const double> probabilities, std::span<const double> x0);

/// {"metric":..., "value":..., "n":..., "config_digest":..., "seed":...}
std::string metric_json(const std::string& metric, double value, std::size_t n,
                        const std::string& config_digest, std::uint64_t seed);

}  // namespace bitdiff
