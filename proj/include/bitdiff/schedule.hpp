// SPDX-License-Identifier: Apache-2.0
//
// Online entropy-rate noise allocation.
//
// Training errors e(sigma) are pushed into a FIFO; the per-bin mean of
// e / (sigma^2 + eps) over K log-spaced bins is a piecewise-constant proxy
// for the entropy rate per unit log-noise. The schedule density over
// u = log sigma is
//
//   pi(u) ~ g(e^u) * rate(u)^alpha,   g(s) = s^n / (s^n + c^n),
//
// normalized over [log sigma_min, log sigma_max]. The gate has the closed
// form antiderivative (1/n) log(e^{nu} + c^n), so the CDF and its inverse
// are exact within each bin.
#pragma once

#include <cstddef>
#include <deque>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/rng.hpp"

namespace bitdiff {

struct ScheduleConfig {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  std::size_t bins = 64;
  std::size_t capacity = 8192;
  double gate_c = 0.1;  // 0 disables the gate
  double gate_n = 3.0;
  double alpha = 0.5;
  double eps = 1e-8;
  double p_mean = -1.2;
  double p_std = 1.2;
  std::size_t warmup_steps = 2000;
  std::size_t transition_steps = 500;

  static ScheduleConfig from_spec(const DiffusionSpec& spec);
  void validate() const;
};

/// s^n / (s^n + c^n); 1 when c == 0.
double gate(double sigma, double c, double n);

struct ScheduleRow {
  double sigma_center = 0.0;
  double rate = 0.0;         // per-bin mean proxy after empty-bin fallback
  double probability = 0.0;  // q_k, training bin sampling probability
  double density = 0.0;      // pi at the bin center
  std::size_t count = 0;
};

class ScheduleState {
 public:
  explicit ScheduleState(ScheduleConfig config = {});
  ScheduleState(const ScheduleState& other);
  ScheduleState& operator=(const ScheduleState& other);

  const ScheduleConfig& config() const { return config_; }

  /// Push (sigma, unweighted error); evicts the oldest pair at capacity.
  void record(double sigma, double error);
  std::size_t size() const;
  bool initialized() const;
  /// Buffered (sigma, error) pairs, oldest first.
  std::vector<std::pair<double, double>> records() const;

  double log_min() const;
  double log_max() const;
  /// Index of the bin holding u (clamped to the support).
  std::size_t bin_of(double u) const;
  double bin_lower(std::size_t k) const;
  double bin_upper(std::size_t k) const;

  /// Per-bin rates after the nearest-populated-bin fallback.
  std::vector<double> bin_rates() const;
  /// q_k ~ g(sigma_k) rate_k^alpha with sigma_k the bin midpoint.
  std::vector<double> bin_probabilities() const;

  /// Normalized density pi over u = log sigma.
  double density(double u) const;
  /// Increasing in u, F(log sigma_min) = 0, F(log sigma_max) = 1.
  double cdf(double u) const;
  /// u with cdf(u) = level.
  double inverse_cdf(double level) const;

  /// sigma at CDF level q; q = 0 gives sigma_min, q = 1 gives sigma_max.
  double quantile(double q) const;

  /// N + 1 decreasing noise levels at uniform CDF spacing, from sigma_max
  /// down to sigma_min.
  std::vector<double> entropy_grid(std::size_t intervals) const;

  /// Log-normal before warmup, entropy-rate after the transition, and a
  /// linearly ramped mixture of the two in between.
  double sample_training_sigma(Rng& rng, std::size_t global_step) const;
  double sample_lognormal(Rng& rng) const;
  double sample_entropy_rate(Rng& rng) const;

  std::vector<ScheduleRow> snapshot() const;
  /// CSV with header sigma_center,rate,q,density,count.
  std::string snapshot_csv() const;

 private:
  struct Table {
    std::vector<double> rates;
    std::vector<double> weights;  // rate^alpha
    std::vector<double> mass;     // unnormalized per-bin integral of pi
    std::vector<double> cumulative;  // running sum of mass, size bins + 1
    std::vector<double> q;
    std::vector<std::size_t> counts;
    double total = 0.0;
    bool ready = false;
  };

  /// Consistent copy of the derived bin table, rebuilt if records changed.
  Table current_table() const;
  Table build_table() const;
  double gate_integral(double u) const;
  double gate_integral_inverse(double g) const;
  double density_in(const Table& t, double u) const;
  double cdf_in(const Table& t, double u) const;
  double inverse_cdf_in(const Table& t, double level) const;

  ScheduleConfig config_;
  std::deque<std::pair<double, double>> fifo_;
  mutable std::mutex mutex_;
  mutable Table table_;
  mutable bool dirty_ = true;
};

/// sigma_i = (smax^(1/rho) + i/N (smin^(1/rho) - smax^(1/rho)))^rho, i = 0..N.
std::vector<double> karras_grid(std::size_t intervals, const DiffusionSpec& spec);

}  // namespace bitdiff
