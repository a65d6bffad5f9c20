// SPDX-License-Identifier: Apache-2.0
//
// Samplers for the variance-exploding probability-flow ODE
//
//   dx/dsigma = (x - D(x, sigma)) / sigma
//
// with optional EDM-style churn (temporarily raise sigma to (1 + gamma)
// sigma and inject matching noise before each deterministic step),
// asymmetric time-interval label shifts and carry-mode self-conditioning.
// A churn step with small gamma behaves like a reverse-SDE step with
// Langevin strength lambda = gamma sigma / (sigma - sigma_next); the
// generalized reverse-SDE stepper is provided for checking that claim.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/rng.hpp"
#include "bitdiff/schedule.hpp"

namespace bitdiff {

enum class GridKind { karras, entropy_rate };
enum class StepMethod { euler, heun };
enum class SelfCondMode { off, carry };

struct SamplerConfig {
  std::size_t nfe = 256;  // number of grid intervals
  GridKind grid = GridKind::entropy_rate;
  StepMethod method = StepMethod::euler;
  double s_churn = 0.0;
  double s_noise = 1.003;
  double window_lo = 0.0;  // entropy-CDF window for churn
  double window_hi = 1.0;
  double eta = 0.0;
  SelfCondMode sc_mode = SelfCondMode::carry;
  std::uint64_t seed = 0;

  void validate() const;
  bool full_band() const { return window_lo <= 0.0 && window_hi >= 1.0; }
};

struct StepDiagnostics {
  std::size_t step = 0;
  double sigma = 0.0;
  double sigma_next = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  double sigma_hat = 0.0;
  double lambda = 0.0;
  double sigma_eval = 0.0;
};

/// Batched denoiser callback. x and out hold `batch` rows of equal length;
/// sc holds the self-conditioning input (the neutral value 0.5 when absent).
/// Rows must be treated independently.
using BatchDenoiser = std::function<void(std::span<const double> x, std::size_t batch,
                                         double sigma, std::span<const double> sc,
                                         std::span<double> out)>;

/// min(S_churn / N, sqrt(2) - 1) inside [sigma_low, sigma_high], else 0.
double raw_churn_gamma(const SamplerConfig& config, double window_low, double window_high,
                       double sigma);

struct ChurnResult {
  std::vector<double> x;
  double sigma_hat = 0.0;
};

/// x + S_noise sqrt(sigma_hat^2 - sigma^2) z with sigma_hat = (1 + gamma)
/// sigma. gamma == 0 returns x unchanged and draws nothing.
ChurnResult churn_inflate(std::span<const double> x, double sigma, double gamma, double s_noise,
                          Rng& rng);

/// exp((1 - eta) log sigma_state + eta log sigma_noisier); eta == 0 returns
/// sigma_state exactly.
double ati_eval_sigma(double sigma_state, double sigma_noisier, double eta);

/// gamma sigma / (sigma - sigma_next).
double effective_lambda(double gamma, double sigma, double sigma_next);
/// Drift-matched finite-step strength: gamma sigma / Delta + gamma + gamma^2 sigma / Delta.
double lambda_drift(double gamma, double sigma, double sigma_next);
/// Variance-matched finite-step strength: (gamma + gamma^2 / 2) sigma / Delta.
double lambda_noise(double gamma, double sigma, double sigma_next);

/// One deterministic step of a batch from sigma_from to sigma_to. The
/// denoiser is evaluated at sigma_eval for the first stage. Heun adds a
/// second stage at sigma_to unless `terminal` is set. Returns the last
/// denoiser output.
std::vector<double> pf_step(std::vector<double>& x, std::size_t batch, double sigma_from,
                            double sigma_to, const BatchDenoiser& denoiser, double sigma_eval,
                            StepMethod method, std::span<const double> sc, bool terminal = false);

/// Euler step of the generalized reverse VE SDE:
///   x + Delta sigma s + lambda Delta sigma s + sqrt(2 lambda sigma Delta) z,
/// with s = (D(x, sigma) - x) / sigma^2. One Rng per batch row.
std::vector<double> reverse_sde_step(std::span<const double> x, std::size_t batch, double sigma,
                                     double sigma_next, double lambda,
                                     const BatchDenoiser& denoiser, std::span<Rng> rngs);

struct GenerateResult {
  std::vector<double> x;              // final analog state, batch * S
  std::vector<double> probabilities;  // last denoiser output, batch * S
  std::vector<StepDiagnostics> trace;
  std::size_t nfe = 0;
};

/// Resolve the sampling grid for a config. The entropy grid needs a schedule.
std::vector<double> make_grid(const SamplerConfig& config, const DiffusionSpec& spec,
                              const ScheduleState* schedule);

/// Full sampler. Trajectory b draws its initial state and churn noise from
/// its own stream derived from (seed, b), so results do not depend on the
/// batch size. The schedule is needed only for entropy-CDF windows.
GenerateResult generate(const BatchDenoiser& denoiser, const SamplerConfig& config,
                        std::span<const double> grid, const ScheduleState* schedule,
                        std::size_t batch, std::size_t bit_length, const DiffusionSpec& spec,
                        std::size_t first_trajectory = 0);

/// CSV with header step,sigma,sigma_next,delta,gamma,sigma_hat,lambda,sigma_eval.
std::string trace_csv(std::span<const StepDiagnostics> trace);

GridKind parse_grid_kind(const std::string& name);
StepMethod parse_step_method(const std::string& name);
SelfCondMode parse_sc_mode(const std::string& name);

}  // namespace bitdiff
