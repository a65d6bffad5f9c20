// SPDX-License-Identifier: Apache-2.0
//
// Exact posterior quantities for explicitly enumerable toy distributions.
// The noisy marginal of x0 + sigma * eps is a Gaussian mixture with one
// component per codeword, so the denoiser E[x0 | x], the score and the
// posterior entropy can all be computed exactly. These are the ground truth
// the learned and approximate pieces are checked against.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/rng.hpp"

namespace bitdiff {

/// Largest support V^T the enumeration routes accept.
inline constexpr std::size_t kMaxEnumeration = 100000;

enum class GeneratorKind { iid_uniform, markov, explicit_support };

struct SupportEntry {
  TokenSequence tokens;
  double probability = 0.0;
};

class ToyDistribution {
 public:
  static ToyDistribution iid_uniform(VocabSpec vocab, std::size_t length);
  /// transition is V x V row-major; rows and initial must each sum to 1.
  static ToyDistribution markov(VocabSpec vocab, std::size_t length, std::vector<double> initial,
                                std::vector<double> transition);
  static ToyDistribution explicit_support(VocabSpec vocab, std::size_t length,
                                          std::vector<SupportEntry> support);

  /// Markov chain where each state moves to (state + 1) mod V with
  /// probability `stay`, spreading the rest uniformly over the other states.
  /// Uniform initial distribution.
  static ToyDistribution cyclic_markov(VocabSpec vocab, std::size_t length, double stay);

  const VocabSpec& vocab() const { return vocab_; }
  std::size_t length() const { return length_; }
  std::size_t bit_length() const { return length_ * vocab_.bits; }
  GeneratorKind kind() const { return kind_; }
  const std::vector<double>& initial() const { return initial_; }
  const std::vector<double>& transition() const { return transition_; }

  /// Iid and Markov generators factor along the sequence, which permits the
  /// forward-backward route.
  bool has_chain_structure() const { return kind_ != GeneratorKind::explicit_support; }

  /// V^T, saturating.
  std::size_t sequence_space() const;
  bool enumerable() const { return sequence_space() <= kMaxEnumeration; }

  /// Positive-probability sequences. Throws CapacityError if V^T exceeds
  /// kMaxEnumeration.
  const std::vector<SupportEntry>& support() const;

  /// log p(tokens); -infinity for impossible sequences.
  double log_prob(std::span<const TokenId> tokens) const;
  TokenSequence sample(Rng& rng) const;

  /// Exact Shannon entropy of the sequence distribution, nats.
  double entropy() const;
  /// Token marginal at every position, length x V row-major.
  std::vector<double> position_marginals() const;
  /// Position-averaged token marginal.
  std::vector<double> unigram_marginal() const;
  /// Pooled distribution of consecutive pairs (a, b), V x V row-major.
  std::vector<double> bigram_marginal() const;

  /// Plain-text description, "key = value" per line, readable by parse().
  std::string serialize() const;
  static ToyDistribution parse(const std::string& text);

 private:
  ToyDistribution() = default;
  void check_tokens(std::span<const TokenId> tokens) const;

  VocabSpec vocab_;
  std::size_t length_ = 0;
  GeneratorKind kind_ = GeneratorKind::iid_uniform;
  std::vector<double> initial_;
  std::vector<double> transition_;
  mutable std::vector<SupportEntry> support_;
  mutable bool support_ready_ = false;
};

/// The Gaussian mixture p_sigma(x) = sum_z p(z) N(x; b(z), sigma^2 I).
class NoisyMarginal {
 public:
  NoisyMarginal(const ToyDistribution& dist, double sigma);

  double sigma() const { return sigma_; }
  /// Normalized posterior weights over support(), via log-sum-exp.
  std::vector<double> posterior_weights(std::span<const double> x) const;
  /// log p_sigma(x) including the Gaussian normalizer.
  double log_density(std::span<const double> x) const;

 private:
  const ToyDistribution* dist_;
  double sigma_;
  std::vector<std::vector<double>> codewords_;
  std::vector<double> log_prior_;
};

enum class OracleRoute { automatic, enumerate, chain };

/// E[x0 | x_sigma = x]. automatic picks the chain route when available.
std::vector<double> exact_denoiser(std::span<const double> x, double sigma,
                                   const ToyDistribution& dist,
                                   OracleRoute route = OracleRoute::automatic);

/// Gradient of log p_sigma at x: sum_z w(z) (b(z) - x) / sigma^2.
std::vector<double> exact_score(std::span<const double> x, double sigma,
                                const ToyDistribution& dist,
                                OracleRoute route = OracleRoute::automatic);

/// Entropy of the exact posterior over sequences given x, nats.
double posterior_entropy(std::span<const double> x, double sigma, const ToyDistribution& dist);

struct EntropyPoint {
  double sigma = 0.0;
  double conditional_entropy = 0.0;  // H(x0 | x_sigma)
  double rate = 0.0;                 // dH / dlog sigma
};

/// Monte Carlo estimate of H(x0 | x_sigma) with common random numbers across
/// sigma values; the rate is a central difference with step `log_step` in
/// log sigma.
std::vector<EntropyPoint> exact_entropy_profile(const ToyDistribution& dist,
                                                std::span<const double> sigmas, std::size_t n_mc,
                                                Rng& rng, double log_step = 0.05);

/// -log p(tokens) in nats; +infinity for impossible sequences.
double sequence_nll(std::span<const TokenId> tokens, const ToyDistribution& dist);

/// Batched exact denoiser for use as a sampler callback. Rows are
/// independent; x and out hold batch * bit_length values.
void exact_denoiser_batch(const ToyDistribution& dist, std::span<const double> x, double sigma,
                          std::span<double> out);

}  // namespace bitdiff
