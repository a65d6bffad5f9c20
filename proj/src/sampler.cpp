// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bitdiff/errors.hpp"

namespace bitdiff {

void SamplerConfig::validate() const {
  if (nfe == 0) throw ArgumentError("sampler needs at least one interval");
  if (!(s_churn >= 0.0)) throw ArgumentError("S_churn must be non-negative");
  if (!(s_noise > 0.0)) throw ArgumentError("S_noise must be positive");
  if (!(window_lo >= 0.0 && window_lo <= window_hi && window_hi <= 1.0)) {
    throw ArgumentError("churn window must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(eta >= 0.0 && eta < 1.0)) throw ArgumentError("ATI lag eta must lie in [0, 1)");
}

double raw_churn_gamma(const SamplerConfig& config, double window_low, double window_high,
                       double sigma) {
  if (sigma < window_low || sigma > window_high) return 0.0;
  return std::min(config.s_churn / static_cast<double>(config.nfe), std::sqrt(2.0) - 1.0);
}

ChurnResult churn_inflate(std::span<const double> x, double sigma, double gamma, double s_noise,
                          Rng& rng) {
  if (!(gamma >= 0.0)) throw ArgumentError("churn amount gamma must be non-negative");
  ChurnResult out{std::vector<double>(x.begin(), x.end()), sigma};
  if (gamma == 0.0) return out;
  out.sigma_hat = (1.0 + gamma) * sigma;
  const double std_dev = s_noise * std::sqrt(out.sigma_hat * out.sigma_hat - sigma * sigma);
  for (auto& v : out.x) v += std_dev * rng.normal();
  return out;
}

double ati_eval_sigma(double sigma_state, double sigma_noisier, double eta) {
  if (!(sigma_state > 0.0) || sigma_noisier < sigma_state) {
    throw ArgumentError("ATI needs sigma_noisier >= sigma_state > 0");
  }
  if (eta == 0.0) return sigma_state;
  return std::exp((1.0 - eta) * std::log(sigma_state) + eta * std::log(sigma_noisier));
}

double effective_lambda(double gamma, double sigma, double sigma_next) {
  const double delta = sigma - sigma_next;
  if (!(delta > 0.0)) throw ArgumentError("effective lambda needs sigma > sigma_next");
  return gamma * sigma / delta;
}

double lambda_drift(double gamma, double sigma, double sigma_next) {
  const double delta = sigma - sigma_next;
  if (!(delta > 0.0)) throw ArgumentError("lambda needs sigma > sigma_next");
  return gamma * sigma / delta + gamma + gamma * gamma * sigma / delta;
}

double lambda_noise(double gamma, double sigma, double sigma_next) {
  const double delta = sigma - sigma_next;
  if (!(delta > 0.0)) throw ArgumentError("lambda needs sigma > sigma_next");
  return (gamma + 0.5 * gamma * gamma) * sigma / delta;
}

std::vector<double> pf_step(std::vector<double>& x, std::size_t batch, double sigma_from,
                            double sigma_to, const BatchDenoiser& denoiser, double sigma_eval,
                            StepMethod method, std::span<const double> sc, bool terminal) {
  if (!(sigma_from > sigma_to) || !(sigma_to > 0.0)) {
    throw ArgumentError("probability-flow step needs sigma_from > sigma_to > 0");
  }
  const std::size_t n = x.size();
  std::vector<double> denoised(n);
  denoiser(x, batch, sigma_eval, sc, denoised);
  const double h = sigma_to - sigma_from;
  if (method == StepMethod::euler || terminal) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] + h * (x[i] - denoised[i]) / sigma_from;
    return denoised;
  }
  std::vector<double> slope(n), trial(n);
  for (std::size_t i = 0; i < n; ++i) {
    slope[i] = (x[i] - denoised[i]) / sigma_from;
    trial[i] = x[i] + h * slope[i];
  }
  std::vector<double> second(n);
  denoiser(trial, batch, sigma_to, sc, second);
  for (std::size_t i = 0; i < n; ++i) {
    const double slope2 = (trial[i] - second[i]) / sigma_to;
    x[i] = x[i] + h * 0.5 * (slope[i] + slope2);
  }
  return second;
}

std::vector<double> reverse_sde_step(std::span<const double> x, std::size_t batch, double sigma,
                                     double sigma_next, double lambda,
                                     const BatchDenoiser& denoiser, std::span<Rng> rngs) {
  if (!(lambda >= 0.0)) throw ArgumentError("reverse-SDE strength must be non-negative");
  const double delta = sigma - sigma_next;
  if (!(delta > 0.0)) throw ArgumentError("reverse-SDE step needs sigma > sigma_next");
  if (batch == 0 || x.size() % batch != 0 || rngs.size() != batch) {
    throw ShapeError("reverse-SDE step needs one stream per batch row");
  }
  const std::size_t S = x.size() / batch;
  std::vector<double> neutral(x.size(), 0.5), denoised(x.size());
  denoiser(x, batch, sigma, neutral, denoised);
  const double noise_scale = std::sqrt(2.0 * lambda * sigma * delta);
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = b * S; i < (b + 1) * S; ++i) {
      const double score = (denoised[i] - x[i]) / (sigma * sigma);
      out[i] = x[i] + delta * sigma * score + lambda * delta * sigma * score;
      if (lambda > 0.0) out[i] += noise_scale * rngs[b].normal();
    }
  }
  return out;
}

std::vector<double> make_grid(const SamplerConfig& config, const DiffusionSpec& spec,
                              const ScheduleState* schedule) {
  if (config.grid == GridKind::karras) return karras_grid(config.nfe, spec);
  if (schedule == nullptr) throw ArgumentError("entropy-rate grid needs a schedule state");
  return schedule->entropy_grid(config.nfe);
}

GenerateResult generate(const BatchDenoiser& denoiser, const SamplerConfig& config,
                        std::span<const double> grid, const ScheduleState* schedule,
                        std::size_t batch, std::size_t bit_length, const DiffusionSpec& spec,
                        std::size_t first_trajectory) {
  config.validate();
  if (grid.size() != config.nfe + 1) throw ArgumentError("grid length must be nfe + 1");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] < grid[i - 1]) || !(grid[i] > 0.0)) {
      throw ArgumentError("sampling grid must be positive and strictly decreasing");
    }
  }
  if (batch == 0 || bit_length == 0) throw ArgumentError("empty batch");

  double window_low = -std::numeric_limits<double>::infinity();
  double window_high = std::numeric_limits<double>::infinity();
  if (!config.full_band()) {
    if (schedule == nullptr) throw ArgumentError("churn window quantiles need a schedule state");
    window_low = schedule->quantile(config.window_lo);
    window_high = schedule->quantile(config.window_hi);
  }

  const std::size_t S = bit_length;
  std::vector<Rng> rngs;
  rngs.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    rngs.emplace_back(derive_seed(config.seed, first_trajectory + b));
  }

  GenerateResult result;
  result.x.resize(batch * S);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < S; ++i) {
      result.x[b * S + i] = spec.data_center + grid.front() * rngs[b].normal();
    }
  }
  std::vector<double> sc(batch * S, 0.5);
  result.trace.reserve(config.nfe);

  for (std::size_t step = 0; step < config.nfe; ++step) {
    const double sigma = grid[step];
    const double sigma_next = grid[step + 1];
    const double gamma = raw_churn_gamma(config, window_low, window_high, sigma);
    double sigma_hat = sigma;
    if (gamma > 0.0) {
      for (std::size_t b = 0; b < batch; ++b) {
        auto row = std::span(result.x).subspan(b * S, S);
        auto churned = churn_inflate(row, sigma, gamma, config.s_noise, rngs[b]);
        std::copy(churned.x.begin(), churned.x.end(), row.begin());
        sigma_hat = churned.sigma_hat;
      }
    }
    const double noisier = std::max(step == 0 ? grid.front() : grid[step - 1], sigma_hat);
    const double sigma_eval = ati_eval_sigma(sigma_hat, noisier, config.eta);
    const bool terminal = step + 1 == config.nfe;

    auto denoised = pf_step(result.x, batch, sigma_hat, sigma_next, denoiser, sigma_eval,
                            config.method, sc, terminal);
    result.nfe += (config.method == StepMethod::heun && !terminal) ? 2 : 1;
    if (config.sc_mode == SelfCondMode::carry) sc = denoised;
    result.probabilities = std::move(denoised);

    StepDiagnostics d;
    d.step = step;
    d.sigma = sigma;
    d.sigma_next = sigma_next;
    d.delta = sigma - sigma_next;
    d.gamma = gamma;
    d.sigma_hat = sigma_hat;
    d.lambda = gamma > 0.0 ? effective_lambda(gamma, sigma, sigma_next) : 0.0;
    d.sigma_eval = sigma_eval;
    result.trace.push_back(d);
  }
  return result;
}

std::string trace_csv(std::span<const StepDiagnostics> trace) {
  std::ostringstream out;
  out.precision(17);
  out << "step,sigma,sigma_next,delta,gamma,sigma_hat,lambda,sigma_eval\n";
  for (const auto& d : trace) {
    out << d.step << ',' << d.sigma << ',' << d.sigma_next << ',' << d.delta << ',' << d.gamma
        << ',' << d.sigma_hat << ',' << d.lambda << ',' << d.sigma_eval << '\n';
  }
  return out.str();
}

GridKind parse_grid_kind(const std::string& name) {
  if (name == "karras") return GridKind::karras;
  if (name == "entropy" || name == "entropy_rate") return GridKind::entropy_rate;
  throw ConfigError("unknown grid kind: " + name);
}

StepMethod parse_step_method(const std::string& name) {
  if (name == "euler") return StepMethod::euler;
  if (name == "heun") return StepMethod::heun;
  throw ConfigError("unknown step method: " + name);
}

SelfCondMode parse_sc_mode(const std::string& name) {
  if (name == "off") return SelfCondMode::off;
  if (name == "carry") return SelfCondMode::carry;
  throw ConfigError("unknown self-conditioning mode: " + name);
}

}  // namespace bitdiff
