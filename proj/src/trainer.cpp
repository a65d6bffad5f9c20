// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numbers>

#include "bitdiff/errors.hpp"

namespace bitdiff {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (warmup_steps > steps) throw ConfigError("learning-rate warmup exceeds the step budget");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) {
    throw ConfigError("min_lr_ratio must lie in [0, 1]");
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("gradient clip must be non-negative");
}

double learning_rate_at(const TrainConfig& config, std::size_t step) {
  const double peak = config.learning_rate;
  if (step < config.warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  }
  const std::size_t decay_steps = config.steps - config.warmup_steps;
  if (decay_steps == 0) return peak;
  const double progress =
      std::min(1.0, static_cast<double>(step - config.warmup_steps) / static_cast<double>(decay_steps));
  const double floor = config.min_lr_ratio;
  return peak * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

std::string TrainRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  j["baseline_loss"] = baseline_loss;
  j["unweighted"] = unweighted;
  j["sigma_mean"] = sigma_mean;
  j["lr"] = lr;
  j["grad_norm"] = grad_norm;
  return j.dump();
}

BatchSource distribution_source(const ToyDistribution& dist) {
  return [dist](Rng& rng, std::size_t batch) {
    std::vector<TokenSequence> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(dist.sample(rng));
    return out;
  };
}

BatchSource dataset_source(std::vector<TokenSequence> dataset) {
  if (dataset.empty()) throw ArgumentError("training dataset is empty");
  return [data = std::move(dataset)](Rng& rng, std::size_t batch) {
    std::vector<TokenSequence> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(data[rng.below(data.size())]);
    return out;
  };
}

std::vector<double> encode_batch(const std::vector<TokenSequence>& batch, const VocabSpec& vocab) {
  std::vector<double> out;
  for (const auto& seq : batch) {
    if (seq.size() != batch.front().size()) {
      throw ShapeError("sequences in a batch must share a length");
    }
    const auto bits = encode(seq, vocab);
    out.insert(out.end(), bits.values.begin(), bits.values.end());
  }
  return out;
}

TrainResult train(const BatchSource& source, const VocabSpec& vocab, const NetConfig& net,
                  const TrainConfig& config, ScheduleState& schedule, const DiffusionSpec& spec,
                  const Parameters* initial,
                  const std::function<void(const TrainRecord&, const Parameters&)>& on_record) {
  config.validate();
  net.validate();
  if (net.patch_size != vocab.bits) throw ConfigError("patch size must equal bits per token");

  TrainResult result;
  result.params = initial ? *initial : Parameters::init(net, derive_seed(config.seed, 1));
  Parameters& params = result.params;
  const std::size_t P = params.values.size();
  std::vector<double> m1(P, 0.0), m2(P, 0.0);
  std::vector<std::uint8_t> decay(P, 0);
  for (const auto& v : params.layout.views()) {
    if (v.decay) std::fill_n(decay.begin() + static_cast<std::ptrdiff_t>(v.offset), v.size(), 1);
  }

  Rng data_rng(derive_seed(config.seed, 2));
  Rng noise_rng(derive_seed(config.seed, 3));
  Rng sigma_rng(derive_seed(config.seed, 4));
  const double p_sc = net.sc_enabled ? net.p_sc : 0.0;

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto tokens = source(data_rng, config.batch_size);
    const auto x0 = encode_batch(tokens, vocab);
    const std::size_t S = x0.size() / config.batch_size;
    std::vector<double> sigmas(config.batch_size);
    for (auto& s : sigmas) s = schedule.sample_training_sigma(sigma_rng, step);
    const auto noise = draw_batch_noise(config.batch_size, S, p_sc, noise_rng);

    TrainRecord rec;
    rec.step = step;
    rec.lr = learning_rate_at(config, step);
    double log_sigma = 0.0;
    for (double s : sigmas) log_sigma += std::log(s);
    rec.sigma_mean = std::exp(log_sigma / static_cast<double>(sigmas.size()));
    const auto baseline = matched_filter_losses(x0, sigmas, noise.eps, spec);
    for (double b : baseline) rec.baseline_loss += b / static_cast<double>(baseline.size());

    LossGrad lg;
    try {
      lg = loss_and_grad(params, x0, sigmas, noise, spec);
    } catch (const NumericError& e) {
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      result.log.push_back(rec);
      if (on_record) on_record(rec, params);
      result.diverged = true;
      result.message = "diverged at step " + std::to_string(step) + ": " + e.what();
      return result;
    }
    rec.loss = lg.loss;
    for (double u : lg.unweighted) rec.unweighted += u / static_cast<double>(lg.unweighted.size());
    double norm2 = 0.0;
    for (double g : lg.gradient) norm2 += g * g;
    rec.grad_norm = std::sqrt(norm2);
    if (!std::isfinite(rec.grad_norm)) {
      result.log.push_back(rec);
      if (on_record) on_record(rec, params);
      result.diverged = true;
      result.message = "non-finite gradient at step " + std::to_string(step);
      return result;
    }
    const double clip =
        (config.grad_clip > 0.0 && rec.grad_norm > config.grad_clip) ? config.grad_clip / rec.grad_norm
                                                                     : 1.0;

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < P; ++i) {
      const double g = lg.gradient[i] * clip;
      m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * g;
      m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * g * g;
      double update = (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + config.adam_eps);
      if (decay[i]) update += config.weight_decay * params.values[i];
      params.values[i] -= rec.lr * update;
    }
    for (std::size_t b = 0; b < sigmas.size(); ++b) schedule.record(sigmas[b], lg.unweighted[b]);

    result.log.push_back(rec);
    if (on_record) on_record(rec, params);
    result.steps_done = step + 1;
  }
  return result;
}

}  // namespace bitdiff
