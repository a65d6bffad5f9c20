// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/diffusion_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bitdiff/errors.hpp"

namespace bitdiff {

namespace {

constexpr double kProbLow = std::numeric_limits<double>::denorm_min();
// Largest double below 1.
constexpr double kProbHigh = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;

void check_sigma_positive(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ArgumentError("noise level must be positive and finite, got " + std::to_string(sigma));
  }
}

}  // namespace

void DiffusionSpec::validate() const {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw ArgumentError("diffusion spec requires 0 < sigma_min < sigma_max");
  }
  if (!(logit_clip > 0.0)) throw ArgumentError("logit clip must be positive");
  if (!(rho >= 1.0)) throw ArgumentError("grid exponent rho must be >= 1");
  if (!(sigma_data > 0.0)) throw ArgumentError("sigma_data must be positive");
}

double sigmoid(double logit) {
  if (logit >= 0.0) {
    return 1.0 / (1.0 + std::exp(-logit));
  }
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

AnalogBits corrupt(const AnalogBits& x0, double sigma, const DiffusionSpec& spec, Rng& rng) {
  if (!(sigma >= spec.sigma_min && sigma <= spec.sigma_max)) {
    throw ArgumentError("noise level " + std::to_string(sigma) + " outside [sigma_min, sigma_max]");
  }
  AnalogBits out;
  out.kind = BitKind::noisy;
  out.values.resize(x0.values.size());
  for (std::size_t i = 0; i < x0.values.size(); ++i) {
    out.values[i] = x0.values[i] + sigma * rng.normal();
  }
  return out;
}

double matched_filter_logit(double x, double sigma, const DiffusionSpec& spec) {
  check_sigma_positive(sigma);
  const double raw = (x - spec.data_center) / (sigma * sigma);
  return std::clamp(raw, -spec.logit_clip, spec.logit_clip);
}

void combine_into(std::span<const double> residual, std::span<const double> x, double sigma,
                  const DiffusionSpec& spec, std::span<double> probabilities) {
  if (residual.size() != x.size() || probabilities.size() != x.size()) {
    throw ShapeError("residual, input and output lengths differ");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(residual[i])) throw NumericError("non-finite residual logit");
    const double logit = residual[i] + matched_filter_logit(x[i], sigma, spec);
    probabilities[i] = std::clamp(sigmoid(logit), kProbLow, kProbHigh);
  }
}

DenoiserOutput combine_to_probabilities(std::span<const double> residual, std::span<const double> x,
                                        double sigma, const DiffusionSpec& spec) {
  if (residual.size() != x.size()) throw ShapeError("residual and input lengths differ");
  DenoiserOutput out;
  out.logits.resize(x.size());
  out.probabilities.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(residual[i])) throw NumericError("non-finite residual logit");
    out.logits[i] = residual[i] + matched_filter_logit(x[i], sigma, spec);
    out.probabilities[i] = std::clamp(sigmoid(out.logits[i]), kProbLow, kProbHigh);
  }
  return out;
}

std::vector<double> score_from_denoiser(std::span<const double> denoised, std::span<const double> x,
                                        double sigma) {
  check_sigma_positive(sigma);
  if (denoised.size() != x.size()) throw ShapeError("denoiser output and input lengths differ");
  std::vector<double> score(x.size());
  const double inv_var = 1.0 / (sigma * sigma);
  for (std::size_t i = 0; i < x.size(); ++i) score[i] = (denoised[i] - x[i]) * inv_var;
  return score;
}

double edm_weight(double sigma, const DiffusionSpec& spec) {
  check_sigma_positive(sigma);
  const double s2 = sigma * sigma;
  const double d2 = spec.sigma_data * spec.sigma_data;
  return (s2 + d2) / (s2 * d2);
}

LossValue sm_loss(std::span<const double> denoised, std::span<const double> x0, double sigma,
                  const DiffusionSpec& spec) {
  if (denoised.size() != x0.size() || x0.empty()) {
    throw ShapeError("loss inputs must be non-empty and of equal length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = denoised[i] - x0[i];
    sum += d * d;
  }
  LossValue out;
  out.unweighted = sum / static_cast<double>(x0.size());
  out.weighted = edm_weight(sigma, spec) * out.unweighted;
  return out;
}

double input_scale(double sigma, const DiffusionSpec& spec) {
  if (!(sigma >= 0.0)) throw ArgumentError("noise level must be non-negative");
  return 1.0 / std::sqrt(sigma * sigma + spec.sigma_data * spec.sigma_data);
}

}  // namespace bitdiff
