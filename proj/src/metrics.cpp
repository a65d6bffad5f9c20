// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/metrics.hpp"

#include <cmath>
#include <json.hpp>
#include <map>

#include "bitdiff/errors.hpp"

namespace bitdiff {

namespace {

void check_nonempty(const SampleSet& samples) {
  if (samples.sequences.empty()) throw ArgumentError("sample set is empty");
}

double half_l1(const std::vector<double>& counts, double total, const std::vector<double>& truth) {
  double tv = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) tv += std::abs(counts[i] / total - truth[i]);
  return 0.5 * tv;
}

}  // namespace

SampleSet decode_samples(std::span<const double> probabilities, std::size_t batch,
                         const VocabSpec& vocab) {
  if (batch == 0 || probabilities.size() % batch != 0) {
    throw ShapeError("probabilities must hold a whole number of samples");
  }
  const std::size_t S = probabilities.size() / batch;
  SampleSet out;
  out.sequences.reserve(batch);
  out.invalid_counts.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto decoded = decode_values(probabilities.subspan(b * S, S), vocab);
    out.sequences.push_back(std::move(decoded.tokens));
    out.invalid_counts.push_back(decoded.invalid_count);
  }
  return out;
}

double token_entropy(const SampleSet& samples) {
  check_nonempty(samples);
  double sum = 0.0;
  for (const auto& seq : samples.sequences) {
    if (seq.empty()) throw ArgumentError("token entropy of an empty sequence");
    std::map<TokenId, std::size_t> counts;
    for (auto id : seq) ++counts[id];
    double h = 0.0;
    const auto n = static_cast<double>(seq.size());
    for (const auto& [id, c] : counts) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
    sum += h;
  }
  return sum / static_cast<double>(samples.size());
}

TvLevel parse_tv_level(const std::string& name) {
  if (name == "unigram") return TvLevel::unigram;
  if (name == "bigram") return TvLevel::bigram;
  if (name == "full_sequence" || name == "sequence") return TvLevel::full_sequence;
  throw ConfigError("unknown TV level: " + name);
}

const char* tv_level_name(TvLevel level) {
  switch (level) {
    case TvLevel::unigram: return "unigram";
    case TvLevel::bigram: return "bigram";
    case TvLevel::full_sequence: return "full_sequence";
  }
  return "unknown";
}

double tv_distance(const SampleSet& samples, const ToyDistribution& dist, TvLevel level) {
  check_nonempty(samples);
  const std::size_t V = dist.vocab().vocab_size;
  for (const auto& seq : samples.sequences) {
    if (seq.size() != dist.length()) throw ShapeError("sample length differs from the generator");
  }
  switch (level) {
    case TvLevel::unigram: {
      std::vector<double> counts(V, 0.0);
      double total = 0.0;
      for (const auto& seq : samples.sequences) {
        for (auto id : seq) {
          if (id >= V) throw ArgumentError("sample token out of range");
          counts[id] += 1.0;
          total += 1.0;
        }
      }
      return half_l1(counts, total, dist.unigram_marginal());
    }
    case TvLevel::bigram: {
      if (dist.length() < 2) throw ArgumentError("bigram TV needs sequences of length >= 2");
      std::vector<double> counts(V * V, 0.0);
      double total = 0.0;
      for (const auto& seq : samples.sequences) {
        for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
          if (seq[t] >= V || seq[t + 1] >= V) throw ArgumentError("sample token out of range");
          counts[seq[t] * V + seq[t + 1]] += 1.0;
          total += 1.0;
        }
      }
      return half_l1(counts, total, dist.bigram_marginal());
    }
    case TvLevel::full_sequence: {
      const auto& support = dist.support();
      std::map<TokenSequence, double> counts;
      for (const auto& seq : samples.sequences) counts[seq] += 1.0;
      const auto n = static_cast<double>(samples.size());
      double tv = 0.0;
      double matched = 0.0;
      for (const auto& entry : support) {
        const auto it = counts.find(entry.tokens);
        const double emp = it == counts.end() ? 0.0 : it->second / n;
        matched += emp;
        tv += std::abs(emp - entry.probability);
      }
      tv += 1.0 - matched;
      return std::min(1.0, 0.5 * tv);
    }
  }
  throw ArgumentError("unknown TV level");
}

NllResult oracle_nll(const SampleSet& samples, const ToyDistribution& dist) {
  check_nonempty(samples);
  NllResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples.invalid_counts.empty() && samples.invalid_counts[i] > 0) {
      ++out.invalid;
      continue;
    }
    const double nll = sequence_nll(samples.sequences[i], dist);
    if (!std::isfinite(nll)) {
      ++out.zero_probability;
      continue;
    }
    sum += nll / static_cast<double>(samples.sequences[i].size());
    ++out.scored;
  }
  if (out.scored == 0) throw NumericError("no sample has positive probability under the oracle");
  out.nll_per_token = sum / static_cast<double>(out.scored);
  return out;
}

double bit_error_rate(std::span<const double> probabilities, std::span<const double> x0) {
  if (probabilities.size() != x0.size() || x0.empty()) {
    throw ShapeError("bit error rate inputs must be non-empty and of equal length");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const bool predicted = probabilities[i] >= 0.5;
    const bool truth = x0[i] >= 0.5;
    if (predicted != truth) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(x0.size());
}

std::string metric_json(const std::string& metric, double value, std::size_t n,
                        const std::string& config_digest, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["value"] = value;
  j["n"] = n;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  return j.dump();
}

}  // namespace bitdiff
