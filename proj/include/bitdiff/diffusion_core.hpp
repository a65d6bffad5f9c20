// SPDX-License-Identifier: Apache-2.0
//
// Variance-exploding corruption of analog bits and the closed-form pieces
// built on it: the matched-filter logit of an isolated Bernoulli(1/2) bit,
// the denoiser -> score identity, EDM loss weighting and input scaling.
#pragma once

#include <span>
#include <vector>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/rng.hpp"

namespace bitdiff {

struct DiffusionSpec {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double data_center = 0.5;
  double logit_clip = 30.0;
  double rho = 7.0;

  /// Throws ArgumentError unless 0 < sigma_min < sigma_max, clip > 0, rho >= 1.
  void validate() const;
};

struct DenoiserOutput {
  std::vector<double> probabilities;
  std::vector<double> logits;
};

struct LossValue {
  double weighted = 0.0;
  double unweighted = 0.0;
};

double sigmoid(double logit);

/// x0 + sigma * eps with eps drawn from rng. sigma must lie in
/// [sigma_min, sigma_max].
AnalogBits corrupt(const AnalogBits& x0, double sigma, const DiffusionSpec& spec, Rng& rng);

/// clip((x - c) / sigma^2, -C, C).
double matched_filter_logit(double x, double sigma, const DiffusionSpec& spec);

/// total logit = residual + matched filter; probabilities = sigmoid(total).
/// Probabilities are kept strictly inside (0, 1).
DenoiserOutput combine_to_probabilities(std::span<const double> residual, std::span<const double> x,
                                        double sigma, const DiffusionSpec& spec);

/// In-place variant for hot loops; writes probabilities only.
void combine_into(std::span<const double> residual, std::span<const double> x, double sigma,
                  const DiffusionSpec& spec, std::span<double> probabilities);

/// (D - x) / sigma^2.
std::vector<double> score_from_denoiser(std::span<const double> denoised, std::span<const double> x,
                                        double sigma);

/// (sigma^2 + sigma_data^2) / (sigma^2 sigma_data^2).
double edm_weight(double sigma, const DiffusionSpec& spec);

/// Mean squared bit error and its EDM-weighted value.
LossValue sm_loss(std::span<const double> denoised, std::span<const double> x0, double sigma,
                  const DiffusionSpec& spec);

/// (sigma^2 + sigma_data^2)^(-1/2).
double input_scale(double sigma, const DiffusionSpec& spec);

}  // namespace bitdiff
