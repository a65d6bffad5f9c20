// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bitdiff/errors.hpp"

namespace bitdiff {

ScheduleConfig ScheduleConfig::from_spec(const DiffusionSpec& spec) {
  ScheduleConfig c;
  c.sigma_min = spec.sigma_min;
  c.sigma_max = spec.sigma_max;
  return c;
}

void ScheduleConfig::validate() const {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw ArgumentError("schedule requires 0 < sigma_min < sigma_max");
  }
  if (bins == 0) throw ArgumentError("schedule needs at least one bin");
  if (capacity == 0) throw ArgumentError("schedule buffer capacity must be positive");
  if (!(gate_c >= 0.0) || !(gate_n > 0.0)) throw ArgumentError("gate needs c >= 0 and n > 0");
  if (!(alpha > 0.0)) throw ArgumentError("rate exponent alpha must be positive");
  if (!(eps >= 0.0)) throw ArgumentError("stability constant must be non-negative");
  if (!(p_std > 0.0)) throw ArgumentError("log-normal std must be positive");
}

double gate(double sigma, double c, double n) {
  if (c == 0.0) return 1.0;
  const double sn = std::pow(sigma, n);
  return sn / (sn + std::pow(c, n));
}

ScheduleState::ScheduleState(ScheduleConfig config) : config_(config) { config_.validate(); }

ScheduleState::ScheduleState(const ScheduleState& other) {
  std::lock_guard lock(other.mutex_);
  config_ = other.config_;
  fifo_ = other.fifo_;
  table_ = other.table_;
  dirty_ = other.dirty_;
}

ScheduleState& ScheduleState::operator=(const ScheduleState& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  config_ = other.config_;
  fifo_ = other.fifo_;
  table_ = other.table_;
  dirty_ = other.dirty_;
  return *this;
}

void ScheduleState::record(double sigma, double error) {
  if (!(error >= 0.0) || !std::isfinite(error)) {
    throw ArgumentError("schedule record needs a finite non-negative error");
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("noise level must be positive");
  std::lock_guard lock(mutex_);
  if (fifo_.size() == config_.capacity) fifo_.pop_front();
  fifo_.emplace_back(sigma, error);
  dirty_ = true;
}

std::size_t ScheduleState::size() const {
  std::lock_guard lock(mutex_);
  return fifo_.size();
}

std::vector<std::pair<double, double>> ScheduleState::records() const {
  std::lock_guard lock(mutex_);
  return {fifo_.begin(), fifo_.end()};
}

bool ScheduleState::initialized() const { return current_table().ready; }

double ScheduleState::log_min() const { return std::log(config_.sigma_min); }
double ScheduleState::log_max() const { return std::log(config_.sigma_max); }

double ScheduleState::bin_lower(std::size_t k) const {
  if (k == 0) return log_min();
  return log_min() + (log_max() - log_min()) * static_cast<double>(k) /
                         static_cast<double>(config_.bins);
}

double ScheduleState::bin_upper(std::size_t k) const {
  if (k + 1 >= config_.bins) return log_max();
  return bin_lower(k + 1);
}

std::size_t ScheduleState::bin_of(double u) const {
  const double pos = (u - log_min()) / (log_max() - log_min()) * static_cast<double>(config_.bins);
  if (!(pos > 0.0)) return 0;
  const auto k = static_cast<std::size_t>(pos);
  return std::min(k, config_.bins - 1);
}

double ScheduleState::gate_integral(double u) const {
  if (config_.gate_c == 0.0) return u;
  const double n = config_.gate_n;
  const double a = n * u;
  const double b = n * std::log(config_.gate_c);
  return (std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)))) / n;
}

double ScheduleState::gate_integral_inverse(double g) const {
  if (config_.gate_c == 0.0) return g;
  const double n = config_.gate_n;
  const double b = n * std::log(config_.gate_c);
  return (b + std::log(std::expm1(n * g - b))) / n;
}

ScheduleState::Table ScheduleState::build_table() const {
  const std::size_t K = config_.bins;
  Table t;
  t.counts.assign(K, 0);
  std::vector<double> sums(K, 0.0);
  for (const auto& [sigma, error] : fifo_) {
    const std::size_t k = bin_of(std::log(sigma));
    sums[k] += error / (sigma * sigma + config_.eps);
    ++t.counts[k];
  }
  std::vector<std::size_t> populated;
  for (std::size_t k = 0; k < K; ++k) {
    if (t.counts[k] > 0) populated.push_back(k);
  }
  if (populated.empty()) return t;

  t.rates.assign(K, 0.0);
  for (std::size_t k : populated) t.rates[k] = sums[k] / static_cast<double>(t.counts[k]);
  // Empty bins take the nearest populated bin's rate, averaging on ties.
  for (std::size_t k = 0; k < K; ++k) {
    if (t.counts[k] > 0) continue;
    auto above = std::lower_bound(populated.begin(), populated.end(), k);
    if (above == populated.end()) {
      t.rates[k] = t.rates[populated.back()];
    } else if (above == populated.begin()) {
      t.rates[k] = t.rates[*above];
    } else {
      const std::size_t hi = *above;
      const std::size_t lo = *(above - 1);
      if (hi - k < k - lo) t.rates[k] = t.rates[hi];
      else if (k - lo < hi - k) t.rates[k] = t.rates[lo];
      else t.rates[k] = 0.5 * (t.rates[lo] + t.rates[hi]);
    }
  }

  t.weights.resize(K);
  t.mass.resize(K);
  t.cumulative.assign(K + 1, 0.0);
  t.q.resize(K);
  double q_total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    t.weights[k] = std::pow(t.rates[k], config_.alpha);
    t.mass[k] = t.weights[k] * (gate_integral(bin_upper(k)) - gate_integral(bin_lower(k)));
    t.cumulative[k + 1] = t.cumulative[k] + t.mass[k];
    const double mid = 0.5 * (bin_lower(k) + bin_upper(k));
    t.q[k] = gate(std::exp(mid), config_.gate_c, config_.gate_n) * t.weights[k];
    q_total += t.q[k];
  }
  t.total = t.cumulative[K];
  if (!(t.total > 0.0) || !(q_total > 0.0)) return t;
  for (auto& q : t.q) q /= q_total;
  t.ready = true;
  return t;
}

ScheduleState::Table ScheduleState::current_table() const {
  std::lock_guard lock(mutex_);
  if (dirty_) {
    table_ = build_table();
    dirty_ = false;
  }
  return table_;
}

namespace {

void require_ready(bool ready) {
  if (!ready) {
    throw UninitializedScheduleError("schedule has no populated bin with a positive rate");
  }
}

}  // namespace

std::vector<double> ScheduleState::bin_rates() const {
  auto t = current_table();
  require_ready(t.ready);
  return t.rates;
}

std::vector<double> ScheduleState::bin_probabilities() const {
  auto t = current_table();
  require_ready(t.ready);
  return t.q;
}

double ScheduleState::density_in(const Table& t, double u) const {
  require_ready(t.ready);
  if (u < log_min() || u > log_max()) return 0.0;
  const std::size_t k = bin_of(u);
  return gate(std::exp(u), config_.gate_c, config_.gate_n) * t.weights[k] / t.total;
}

double ScheduleState::cdf_in(const Table& t, double u) const {
  require_ready(t.ready);
  if (u <= log_min()) return 0.0;
  if (u >= log_max()) return 1.0;
  const std::size_t k = bin_of(u);
  const double partial = t.weights[k] * (gate_integral(u) - gate_integral(bin_lower(k)));
  return std::clamp((t.cumulative[k] + partial) / t.total, 0.0, 1.0);
}

double ScheduleState::inverse_cdf_in(const Table& t, double level) const {
  require_ready(t.ready);
  if (level <= 0.0) return log_min();
  if (level >= 1.0) return log_max();
  const double target = level * t.total;
  const std::size_t K = config_.bins;
  // First bin whose upper cumulative edge reaches the target.
  std::size_t k = static_cast<std::size_t>(
      std::lower_bound(t.cumulative.begin() + 1, t.cumulative.end(), target) -
      (t.cumulative.begin() + 1));
  k = std::min(k, K - 1);
  while (k + 1 < K && t.mass[k] == 0.0) ++k;
  const double lo = bin_lower(k);
  const double hi = bin_upper(k);
  if (t.weights[k] == 0.0) return lo;
  const double g = gate_integral(lo) + (target - t.cumulative[k]) / t.weights[k];
  return std::clamp(gate_integral_inverse(g), lo, hi);
}

double ScheduleState::density(double u) const { return density_in(current_table(), u); }
double ScheduleState::cdf(double u) const { return cdf_in(current_table(), u); }
double ScheduleState::inverse_cdf(double level) const {
  return inverse_cdf_in(current_table(), level);
}

double ScheduleState::quantile(double q) const {
  if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("quantile level must lie in [0, 1]");
  if (q == 0.0) return config_.sigma_min;
  if (q == 1.0) return config_.sigma_max;
  return std::exp(inverse_cdf(q));
}

std::vector<double> ScheduleState::entropy_grid(std::size_t intervals) const {
  if (intervals == 0) throw ArgumentError("grid needs at least one interval");
  const auto t = current_table();
  require_ready(t.ready);
  std::vector<double> grid(intervals + 1);
  grid.front() = config_.sigma_max;
  grid.back() = config_.sigma_min;
  const double n = static_cast<double>(intervals);
  for (std::size_t i = 1; i < intervals; ++i) {
    grid[i] = std::exp(inverse_cdf_in(t, 1.0 - static_cast<double>(i) / n));
  }
  return grid;
}

double ScheduleState::sample_lognormal(Rng& rng) const {
  const double sigma = std::exp(config_.p_mean + config_.p_std * rng.normal());
  return std::clamp(sigma, config_.sigma_min, config_.sigma_max);
}

double ScheduleState::sample_entropy_rate(Rng& rng) const {
  const auto t = current_table();
  require_ready(t.ready);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t k = 0;
  for (; k + 1 < t.q.size(); ++k) {
    acc += t.q[k];
    if (u < acc && t.q[k] > 0.0) break;
  }
  while (t.q[k] == 0.0 && k > 0) --k;
  const double lo = bin_lower(k);
  const double hi = bin_upper(k);
  const double sigma = std::exp(lo + (hi - lo) * rng.uniform());
  return std::clamp(sigma, config_.sigma_min, config_.sigma_max);
}

double ScheduleState::sample_training_sigma(Rng& rng, std::size_t global_step) const {
  if (global_step < config_.warmup_steps || !initialized()) return sample_lognormal(rng);
  const std::size_t into = global_step - config_.warmup_steps;
  if (into >= config_.transition_steps) return sample_entropy_rate(rng);
  const double p = static_cast<double>(into) / static_cast<double>(config_.transition_steps);
  return rng.uniform() < p ? sample_entropy_rate(rng) : sample_lognormal(rng);
}

std::vector<ScheduleRow> ScheduleState::snapshot() const {
  const auto t = current_table();
  require_ready(t.ready);
  std::vector<ScheduleRow> rows(config_.bins);
  for (std::size_t k = 0; k < config_.bins; ++k) {
    const double mid = 0.5 * (bin_lower(k) + bin_upper(k));
    rows[k].sigma_center = std::exp(mid);
    rows[k].rate = t.rates[k];
    rows[k].probability = t.q[k];
    rows[k].density = density_in(t, mid);
    rows[k].count = t.counts[k];
  }
  return rows;
}

std::string ScheduleState::snapshot_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "sigma_center,rate,q,density,count\n";
  for (const auto& r : snapshot()) {
    out << r.sigma_center << ',' << r.rate << ',' << r.probability << ',' << r.density << ','
        << r.count << '\n';
  }
  return out.str();
}

std::vector<double> karras_grid(std::size_t intervals, const DiffusionSpec& spec) {
  if (intervals == 0) throw ArgumentError("grid needs at least one interval");
  spec.validate();
  const double inv_rho = 1.0 / spec.rho;
  const double hi = std::pow(spec.sigma_max, inv_rho);
  const double lo = std::pow(spec.sigma_min, inv_rho);
  std::vector<double> grid(intervals + 1);
  const double n = static_cast<double>(intervals);
  for (std::size_t i = 0; i <= intervals; ++i) {
    grid[i] = std::pow(hi + static_cast<double>(i) / n * (lo - hi), spec.rho);
  }
  grid.front() = spec.sigma_max;
  grid.back() = spec.sigma_min;
  return grid;
}

}  // namespace bitdiff
