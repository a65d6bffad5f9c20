// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "bitdiff/errors.hpp"

namespace bitdiff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double peak = -kInf;
  for (double a : v) peak = std::max(peak, a);
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (double a : v) sum += std::exp(a - peak);
  return peak + std::log(sum);
}

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ArgumentError(std::string(what) + " has a negative or non-finite entry");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ArgumentError(std::string(what) + " does not sum to 1");
  }
}

double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

/// bits[v * m + j] is bit j (MSB first) of token v.
std::vector<double> codeword_table(const VocabSpec& vocab) {
  std::vector<double> table(static_cast<std::size_t>(vocab.vocab_size) * vocab.bits);
  for (TokenId v = 0; v < vocab.vocab_size; ++v) {
    for (std::uint32_t j = 0; j < vocab.bits; ++j) {
      table[v * vocab.bits + j] = static_cast<double>((v >> (vocab.bits - 1 - j)) & 1U);
    }
  }
  return table;
}

void check_input(std::span<const double> x, double sigma, const ToyDistribution& dist) {
  if (x.size() != dist.bit_length()) {
    throw ShapeError("noisy input has " + std::to_string(x.size()) + " bits, distribution expects " +
                     std::to_string(dist.bit_length()));
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("noise level must be positive");
}

/// Per-position token log-likelihoods -|x_t - b(v)|^2 / (2 sigma^2).
std::vector<double> token_log_likelihoods(std::span<const double> x, double sigma,
                                          const ToyDistribution& dist,
                                          const std::vector<double>& table) {
  const std::size_t V = dist.vocab().vocab_size;
  const std::size_t m = dist.vocab().bits;
  const double scale = -0.5 / (sigma * sigma);
  std::vector<double> ll(dist.length() * V);
  for (std::size_t t = 0; t < dist.length(); ++t) {
    for (std::size_t v = 0; v < V; ++v) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = x[t * m + j] - table[v * m + j];
        d2 += d * d;
      }
      ll[t * V + v] = scale * d2;
    }
  }
  return ll;
}

/// Chain posterior token marginals in log space. Always well defined.
std::vector<double> chain_marginals_log(const ToyDistribution& dist, const std::vector<double>& ll) {
  const std::size_t V = dist.vocab().vocab_size;
  const std::size_t T = dist.length();
  std::vector<double> log_init(V), log_trans(V * V);
  if (dist.kind() == GeneratorKind::iid_uniform) {
    std::fill(log_init.begin(), log_init.end(), -std::log(static_cast<double>(V)));
    std::fill(log_trans.begin(), log_trans.end(), -std::log(static_cast<double>(V)));
  } else {
    for (std::size_t v = 0; v < V; ++v) log_init[v] = std::log(dist.initial()[v]);
    for (std::size_t k = 0; k < V * V; ++k) log_trans[k] = std::log(dist.transition()[k]);
  }
  std::vector<double> alpha(T * V), beta(T * V, 0.0), tmp(V);
  for (std::size_t v = 0; v < V; ++v) alpha[v] = log_init[v] + ll[v];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t u = 0; u < V; ++u) tmp[u] = alpha[(t - 1) * V + u] + log_trans[u * V + v];
      alpha[t * V + v] = log_sum_exp(tmp) + ll[t * V + v];
    }
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t u = 0; u < V; ++u) {
      for (std::size_t v = 0; v < V; ++v) {
        tmp[v] = log_trans[u * V + v] + ll[(t + 1) * V + v] + beta[(t + 1) * V + v];
      }
      beta[t * V + u] = log_sum_exp(tmp);
    }
  }
  std::vector<double> post(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t v = 0; v < V; ++v) tmp[v] = alpha[t * V + v] + beta[t * V + v];
    const double norm = log_sum_exp(tmp);
    for (std::size_t v = 0; v < V; ++v) post[t * V + v] = std::exp(tmp[v] - norm);
  }
  return post;
}

/// Scaled forward-backward in probability space. Returns false if any
/// normalizer underflows, in which case the caller falls back to log space.
bool chain_marginals_scaled(const ToyDistribution& dist, const std::vector<double>& ll,
                            std::vector<double>& post) {
  const std::size_t V = dist.vocab().vocab_size;
  const std::size_t T = dist.length();
  std::vector<double> lik(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    const double peak = *std::max_element(ll.begin() + t * V, ll.begin() + (t + 1) * V);
    for (std::size_t v = 0; v < V; ++v) lik[t * V + v] = std::exp(ll[t * V + v] - peak);
  }
  post.assign(T * V, 0.0);
  if (dist.kind() == GeneratorKind::iid_uniform) {
    for (std::size_t t = 0; t < T; ++t) {
      const double norm = std::accumulate(lik.begin() + t * V, lik.begin() + (t + 1) * V, 0.0);
      for (std::size_t v = 0; v < V; ++v) post[t * V + v] = lik[t * V + v] / norm;
    }
    return true;
  }
  const auto& init = dist.initial();
  const auto& trans = dist.transition();
  std::vector<double> alpha(T * V), beta(T * V, 1.0);
  auto normalize = [V](double* row) {
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) s += row[v];
    if (!(s > 0.0) || !std::isfinite(s)) return false;
    for (std::size_t v = 0; v < V; ++v) row[v] /= s;
    return true;
  };
  for (std::size_t v = 0; v < V; ++v) alpha[v] = init[v] * lik[v];
  if (!normalize(alpha.data())) return false;
  for (std::size_t t = 1; t < T; ++t) {
    double* cur = alpha.data() + t * V;
    const double* prev = alpha.data() + (t - 1) * V;
    std::fill(cur, cur + V, 0.0);
    for (std::size_t u = 0; u < V; ++u) {
      const double a = prev[u];
      if (a == 0.0) continue;
      for (std::size_t v = 0; v < V; ++v) cur[v] += a * trans[u * V + v];
    }
    for (std::size_t v = 0; v < V; ++v) cur[v] *= lik[t * V + v];
    if (!normalize(cur)) return false;
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    double* cur = beta.data() + t * V;
    const double* next = beta.data() + (t + 1) * V;
    for (std::size_t u = 0; u < V; ++u) {
      double s = 0.0;
      for (std::size_t v = 0; v < V; ++v) s += trans[u * V + v] * lik[(t + 1) * V + v] * next[v];
      cur[u] = s;
    }
    if (!normalize(cur)) return false;
  }
  for (std::size_t t = 0; t < T; ++t) {
    double* row = post.data() + t * V;
    for (std::size_t v = 0; v < V; ++v) row[v] = alpha[t * V + v] * beta[t * V + v];
    if (!normalize(row)) return false;
  }
  return true;
}

std::vector<double> chain_denoiser(std::span<const double> x, double sigma,
                                   const ToyDistribution& dist, const std::vector<double>& table) {
  const auto ll = token_log_likelihoods(x, sigma, dist, table);
  std::vector<double> post;
  if (!chain_marginals_scaled(dist, ll, post)) post = chain_marginals_log(dist, ll);
  const std::size_t V = dist.vocab().vocab_size;
  const std::size_t m = dist.vocab().bits;
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t t = 0; t < dist.length(); ++t) {
    for (std::size_t v = 0; v < V; ++v) {
      const double w = post[t * V + v];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[t * m + j] += w * table[v * m + j];
    }
  }
  return out;
}

std::vector<double> enumerate_denoiser(std::span<const double> x, double sigma,
                                       const ToyDistribution& dist) {
  NoisyMarginal marginal(dist, sigma);
  const auto w = marginal.posterior_weights(x);
  const auto& support = dist.support();
  const auto table = codeword_table(dist.vocab());
  const std::size_t m = dist.vocab().bits;
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t z = 0; z < support.size(); ++z) {
    for (std::size_t t = 0; t < dist.length(); ++t) {
      const TokenId v = support[z].tokens[t];
      for (std::size_t j = 0; j < m; ++j) out[t * m + j] += w[z] * table[v * m + j];
    }
  }
  return out;
}

std::size_t saturating_pow(std::size_t base, std::size_t exponent) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exponent; ++i) {
    if (r > std::numeric_limits<std::size_t>::max() / base) {
      return std::numeric_limits<std::size_t>::max();
    }
    r *= base;
  }
  return r;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::string cleaned = text;
  std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
  std::istringstream in(cleaned);
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw ConfigError("malformed number list: " + text);
  return out;
}

std::string join(std::span<const double> values) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

}  // namespace

// ---------------------------------------------------------------- ToyDistribution

ToyDistribution ToyDistribution::iid_uniform(VocabSpec vocab, std::size_t length) {
  if (length == 0) throw ArgumentError("sequence length must be positive");
  ToyDistribution d;
  d.vocab_ = vocab;
  d.length_ = length;
  d.kind_ = GeneratorKind::iid_uniform;
  return d;
}

ToyDistribution ToyDistribution::markov(VocabSpec vocab, std::size_t length,
                                        std::vector<double> initial,
                                        std::vector<double> transition) {
  if (length == 0) throw ArgumentError("sequence length must be positive");
  const std::size_t V = vocab.vocab_size;
  if (initial.size() != V || transition.size() != V * V) {
    throw ShapeError("Markov parameters must be V and V x V");
  }
  check_distribution(initial, "initial distribution");
  for (std::size_t u = 0; u < V; ++u) {
    check_distribution(std::span(transition).subspan(u * V, V), "transition row");
  }
  ToyDistribution d;
  d.vocab_ = vocab;
  d.length_ = length;
  d.kind_ = GeneratorKind::markov;
  d.initial_ = std::move(initial);
  d.transition_ = std::move(transition);
  return d;
}

ToyDistribution ToyDistribution::cyclic_markov(VocabSpec vocab, std::size_t length, double stay) {
  const std::size_t V = vocab.vocab_size;
  if (!(stay >= 0.0 && stay <= 1.0)) throw ArgumentError("cyclic Markov weight must be in [0, 1]");
  std::vector<double> initial(V, 1.0 / static_cast<double>(V));
  std::vector<double> transition(V * V, (1.0 - stay) / static_cast<double>(V - 1));
  for (std::size_t u = 0; u < V; ++u) transition[u * V + (u + 1) % V] = stay;
  // Re-normalize rows so they sum to one exactly in floating point.
  for (std::size_t u = 0; u < V; ++u) {
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      if (v != (u + 1) % V) s += transition[u * V + v];
    }
    transition[u * V + (u + 1) % V] = 1.0 - s;
  }
  return markov(vocab, length, std::move(initial), std::move(transition));
}

ToyDistribution ToyDistribution::explicit_support(VocabSpec vocab, std::size_t length,
                                                  std::vector<SupportEntry> support) {
  if (length == 0) throw ArgumentError("sequence length must be positive");
  if (support.empty()) throw ArgumentError("explicit support must not be empty");
  double total = 0.0;
  for (const auto& e : support) {
    if (e.tokens.size() != length) throw ShapeError("support sequence has the wrong length");
    for (TokenId id : e.tokens) {
      if (id >= vocab.vocab_size) throw ArgumentError("support token out of range");
    }
    if (!(e.probability >= 0.0)) throw ArgumentError("support probability must be non-negative");
    total += e.probability;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ArgumentError("support probabilities do not sum to 1");
  ToyDistribution d;
  d.vocab_ = vocab;
  d.length_ = length;
  d.kind_ = GeneratorKind::explicit_support;
  std::erase_if(support, [](const SupportEntry& e) { return e.probability == 0.0; });
  std::sort(support.begin(), support.end(),
            [](const SupportEntry& a, const SupportEntry& b) { return a.tokens < b.tokens; });
  for (std::size_t i = 1; i < support.size(); ++i) {
    if (support[i].tokens == support[i - 1].tokens) {
      throw ArgumentError("explicit support lists a sequence twice");
    }
  }
  d.support_ = std::move(support);
  d.support_ready_ = true;
  return d;
}

std::size_t ToyDistribution::sequence_space() const {
  return saturating_pow(vocab_.vocab_size, length_);
}

const std::vector<SupportEntry>& ToyDistribution::support() const {
  if (support_ready_) return support_;
  if (!enumerable()) {
    throw CapacityError("distribution with V^T > " + std::to_string(kMaxEnumeration) +
                        " cannot be enumerated");
  }
  const std::size_t total = sequence_space();
  const std::size_t V = vocab_.vocab_size;
  TokenSequence tokens(length_, 0);
  for (std::size_t index = 0; index < total; ++index) {
    std::size_t rest = index;
    for (std::size_t t = length_; t-- > 0;) {
      tokens[t] = static_cast<TokenId>(rest % V);
      rest /= V;
    }
    const double lp = log_prob(tokens);
    if (std::isfinite(lp)) support_.push_back({tokens, std::exp(lp)});
  }
  support_ready_ = true;
  return support_;
}

void ToyDistribution::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.size() != length_) {
    throw ShapeError("sequence length " + std::to_string(tokens.size()) + " != " +
                     std::to_string(length_));
  }
  for (TokenId id : tokens) {
    if (id >= vocab_.vocab_size) throw ArgumentError("token id out of range");
  }
}

double ToyDistribution::log_prob(std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  switch (kind_) {
    case GeneratorKind::iid_uniform:
      return -static_cast<double>(length_) * std::log(static_cast<double>(vocab_.vocab_size));
    case GeneratorKind::markov: {
      const std::size_t V = vocab_.vocab_size;
      double lp = std::log(initial_[tokens[0]]);
      for (std::size_t t = 1; t < length_; ++t) {
        lp += std::log(transition_[tokens[t - 1] * V + tokens[t]]);
      }
      return lp;
    }
    case GeneratorKind::explicit_support: {
      const TokenSequence key(tokens.begin(), tokens.end());
      auto it = std::lower_bound(
          support_.begin(), support_.end(), key,
          [](const SupportEntry& e, const TokenSequence& k) { return e.tokens < k; });
      if (it == support_.end() || it->tokens != key) return -kInf;
      return std::log(it->probability);
    }
  }
  return -kInf;
}

TokenSequence ToyDistribution::sample(Rng& rng) const {
  const std::size_t V = vocab_.vocab_size;
  auto draw = [&rng](std::span<const double> p) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<TokenId>(i);
    }
    // Rounding left u above the total; return the last positive entry.
    for (std::size_t i = p.size(); i-- > 0;) {
      if (p[i] > 0.0) return static_cast<TokenId>(i);
    }
    return TokenId{0};
  };
  TokenSequence out(length_);
  switch (kind_) {
    case GeneratorKind::iid_uniform:
      for (auto& id : out) id = static_cast<TokenId>(rng.below(V));
      break;
    case GeneratorKind::markov:
      out[0] = draw(initial_);
      for (std::size_t t = 1; t < length_; ++t) {
        out[t] = draw(std::span(transition_).subspan(out[t - 1] * V, V));
      }
      break;
    case GeneratorKind::explicit_support: {
      std::vector<double> p(support_.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = support_[i].probability;
      out = support_[draw(p)].tokens;
      break;
    }
  }
  return out;
}

std::vector<double> ToyDistribution::position_marginals() const {
  const std::size_t V = vocab_.vocab_size;
  std::vector<double> marg(length_ * V, 0.0);
  switch (kind_) {
    case GeneratorKind::iid_uniform:
      std::fill(marg.begin(), marg.end(), 1.0 / static_cast<double>(V));
      break;
    case GeneratorKind::markov:
      std::copy(initial_.begin(), initial_.end(), marg.begin());
      for (std::size_t t = 1; t < length_; ++t) {
        for (std::size_t u = 0; u < V; ++u) {
          for (std::size_t v = 0; v < V; ++v) {
            marg[t * V + v] += marg[(t - 1) * V + u] * transition_[u * V + v];
          }
        }
      }
      break;
    case GeneratorKind::explicit_support:
      for (const auto& e : support_) {
        for (std::size_t t = 0; t < length_; ++t) marg[t * V + e.tokens[t]] += e.probability;
      }
      break;
  }
  return marg;
}

std::vector<double> ToyDistribution::unigram_marginal() const {
  const std::size_t V = vocab_.vocab_size;
  const auto marg = position_marginals();
  std::vector<double> out(V, 0.0);
  for (std::size_t t = 0; t < length_; ++t) {
    for (std::size_t v = 0; v < V; ++v) out[v] += marg[t * V + v];
  }
  for (auto& p : out) p /= static_cast<double>(length_);
  return out;
}

std::vector<double> ToyDistribution::bigram_marginal() const {
  if (length_ < 2) throw ArgumentError("bigram marginal needs sequences of length >= 2");
  const std::size_t V = vocab_.vocab_size;
  const double pairs = static_cast<double>(length_ - 1);
  std::vector<double> out(V * V, 0.0);
  switch (kind_) {
    case GeneratorKind::iid_uniform:
      std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(V * V));
      break;
    case GeneratorKind::markov: {
      const auto marg = position_marginals();
      for (std::size_t t = 0; t + 1 < length_; ++t) {
        for (std::size_t u = 0; u < V; ++u) {
          for (std::size_t v = 0; v < V; ++v) {
            out[u * V + v] += marg[t * V + u] * transition_[u * V + v] / pairs;
          }
        }
      }
      break;
    }
    case GeneratorKind::explicit_support:
      for (const auto& e : support_) {
        for (std::size_t t = 0; t + 1 < length_; ++t) {
          out[e.tokens[t] * V + e.tokens[t + 1]] += e.probability / pairs;
        }
      }
      break;
  }
  return out;
}

double ToyDistribution::entropy() const {
  const std::size_t V = vocab_.vocab_size;
  switch (kind_) {
    case GeneratorKind::iid_uniform:
      return static_cast<double>(length_) * std::log(static_cast<double>(V));
    case GeneratorKind::markov: {
      const auto marg = position_marginals();
      double h = entropy_of(initial_);
      for (std::size_t t = 0; t + 1 < length_; ++t) {
        for (std::size_t u = 0; u < V; ++u) {
          h += marg[t * V + u] * entropy_of(std::span(transition_).subspan(u * V, V));
        }
      }
      return h;
    }
    case GeneratorKind::explicit_support: {
      double h = 0.0;
      for (const auto& e : support_) h -= e.probability * std::log(e.probability);
      return h;
    }
  }
  return 0.0;
}

std::string ToyDistribution::serialize() const {
  std::ostringstream out;
  switch (kind_) {
    case GeneratorKind::iid_uniform:
      out << "generator = iid_uniform\n";
      break;
    case GeneratorKind::markov:
      out << "generator = markov\n";
      break;
    case GeneratorKind::explicit_support:
      out << "generator = explicit\n";
      break;
  }
  out << "vocab = " << vocab_.vocab_size << "\n";
  out << "length = " << length_ << "\n";
  if (kind_ == GeneratorKind::markov) {
    out << "initial = " << join(initial_) << "\n";
    out << "transition = " << join(transition_) << "\n";
  }
  if (kind_ == GeneratorKind::explicit_support) {
    out.precision(17);
    out << "support = ";
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (i) out << "; ";
      for (std::size_t t = 0; t < length_; ++t) out << (t ? " " : "") << support_[i].tokens[t];
      out << ":" << support_[i].probability;
    }
    out << "\n";
  }
  return out.str();
}

ToyDistribution ToyDistribution::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::string generator = "iid_uniform";
  std::size_t vocab = 0, length = 0;
  std::string initial, transition, support, stay;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw ConfigError("malformed distribution line: " + line);
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "generator") generator = value;
      else if (key == "vocab") vocab = std::stoul(value);
      else if (key == "length") length = std::stoul(value);
      else if (key == "initial") initial = value;
      else if (key == "transition") transition = value;
      else if (key == "support") support = value;
      else if (key == "stay") stay = value;
      else throw ConfigError("unknown distribution key: " + key);
    } catch (const std::logic_error&) {
      throw ConfigError("malformed value for " + key + ": " + value);
    }
  }
  const VocabSpec spec = VocabSpec::for_vocab(vocab);
  if (generator == "iid_uniform") return iid_uniform(spec, length);
  if (generator == "cyclic_markov") {
    return cyclic_markov(spec, length, stay.empty() ? 0.9 : std::stod(stay));
  }
  if (generator == "markov") return markov(spec, length, parse_list(initial), parse_list(transition));
  if (generator == "explicit") {
    std::vector<SupportEntry> entries;
    std::istringstream items(support);
    std::string item;
    while (std::getline(items, item, ';')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("support entry needs tokens:probability");
      SupportEntry e;
      for (double v : parse_list(item.substr(0, colon))) e.tokens.push_back(static_cast<TokenId>(v));
      e.probability = std::stod(item.substr(colon + 1));
      entries.push_back(std::move(e));
    }
    return explicit_support(spec, length, std::move(entries));
  }
  throw ConfigError("unknown generator: " + generator);
}

// ---------------------------------------------------------------- NoisyMarginal

NoisyMarginal::NoisyMarginal(const ToyDistribution& dist, double sigma)
    : dist_(&dist), sigma_(sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("noise level must be positive");
  const auto& support = dist.support();
  const auto table = codeword_table(dist.vocab());
  const std::size_t m = dist.vocab().bits;
  codewords_.reserve(support.size());
  log_prior_.reserve(support.size());
  for (const auto& e : support) {
    std::vector<double> b(dist.bit_length());
    for (std::size_t t = 0; t < dist.length(); ++t) {
      for (std::size_t j = 0; j < m; ++j) b[t * m + j] = table[e.tokens[t] * m + j];
    }
    codewords_.push_back(std::move(b));
    log_prior_.push_back(std::log(e.probability));
  }
}

std::vector<double> NoisyMarginal::posterior_weights(std::span<const double> x) const {
  check_input(x, sigma_, *dist_);
  const double scale = -0.5 / (sigma_ * sigma_);
  std::vector<double> logits(codewords_.size());
  for (std::size_t z = 0; z < codewords_.size(); ++z) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - codewords_[z][i];
      d2 += d * d;
    }
    logits[z] = log_prior_[z] + scale * d2;
  }
  const double norm = log_sum_exp(logits);
  for (auto& l : logits) l = std::exp(l - norm);
  return logits;
}

double NoisyMarginal::log_density(std::span<const double> x) const {
  check_input(x, sigma_, *dist_);
  const double scale = -0.5 / (sigma_ * sigma_);
  std::vector<double> logits(codewords_.size());
  for (std::size_t z = 0; z < codewords_.size(); ++z) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - codewords_[z][i];
      d2 += d * d;
    }
    logits[z] = log_prior_[z] + scale * d2;
  }
  const double dim = static_cast<double>(x.size());
  return log_sum_exp(logits) - 0.5 * dim * std::log(2.0 * M_PI * sigma_ * sigma_);
}

// ---------------------------------------------------------------- free functions

std::vector<double> exact_denoiser(std::span<const double> x, double sigma,
                                   const ToyDistribution& dist, OracleRoute route) {
  check_input(x, sigma, dist);
  if (route == OracleRoute::automatic) {
    route = dist.has_chain_structure() ? OracleRoute::chain : OracleRoute::enumerate;
  }
  if (route == OracleRoute::chain) {
    if (!dist.has_chain_structure()) {
      throw ArgumentError("chain route requires an iid or Markov generator");
    }
    return chain_denoiser(x, sigma, dist, codeword_table(dist.vocab()));
  }
  return enumerate_denoiser(x, sigma, dist);
}

std::vector<double> exact_score(std::span<const double> x, double sigma,
                                const ToyDistribution& dist, OracleRoute route) {
  check_input(x, sigma, dist);
  const double inv_var = 1.0 / (sigma * sigma);
  if (route == OracleRoute::enumerate ||
      (route == OracleRoute::automatic && !dist.has_chain_structure())) {
    NoisyMarginal marginal(dist, sigma);
    const auto w = marginal.posterior_weights(x);
    const auto& support = dist.support();
    const auto table = codeword_table(dist.vocab());
    const std::size_t m = dist.vocab().bits;
    std::vector<double> score(x.size(), 0.0);
    for (std::size_t z = 0; z < support.size(); ++z) {
      for (std::size_t t = 0; t < dist.length(); ++t) {
        const TokenId v = support[z].tokens[t];
        for (std::size_t j = 0; j < m; ++j) {
          score[t * m + j] += w[z] * (table[v * m + j] - x[t * m + j]) * inv_var;
        }
      }
    }
    return score;
  }
  auto d = exact_denoiser(x, sigma, dist, route);
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = (d[i] - x[i]) * inv_var;
  return d;
}

double posterior_entropy(std::span<const double> x, double sigma, const ToyDistribution& dist) {
  NoisyMarginal marginal(dist, sigma);
  return entropy_of(marginal.posterior_weights(x));
}

std::vector<EntropyPoint> exact_entropy_profile(const ToyDistribution& dist,
                                                std::span<const double> sigmas, std::size_t n_mc,
                                                Rng& rng, double log_step) {
  if (n_mc == 0) throw ArgumentError("entropy profile needs at least one Monte Carlo draw");
  if (sigmas.empty()) throw ArgumentError("entropy profile needs at least one noise level");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0.0)) throw ArgumentError("noise levels must be positive");
    if (i > 0 && !(sigmas[i] > sigmas[i - 1])) throw ArgumentError("noise levels must be sorted");
  }
  const std::size_t K = sigmas.size();
  // Three evaluation levels per requested sigma: below, at, above.
  std::vector<NoisyMarginal> marginals;
  marginals.reserve(3 * K);
  for (double s : sigmas) {
    marginals.emplace_back(dist, s * std::exp(-log_step));
    marginals.emplace_back(dist, s);
    marginals.emplace_back(dist, s * std::exp(log_step));
  }
  std::vector<double> sums(3 * K, 0.0);
  std::vector<double> eps(dist.bit_length()), x(dist.bit_length());
  for (std::size_t n = 0; n < n_mc; ++n) {
    const auto clean = encode(dist.sample(rng), dist.vocab());
    for (auto& e : eps) e = rng.normal();
    for (std::size_t k = 0; k < 3 * K; ++k) {
      const double s = marginals[k].sigma();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = clean.values[i] + s * eps[i];
      sums[k] += entropy_of(marginals[k].posterior_weights(x));
    }
  }
  std::vector<EntropyPoint> out(K);
  const double inv_n = 1.0 / static_cast<double>(n_mc);
  for (std::size_t k = 0; k < K; ++k) {
    out[k].sigma = sigmas[k];
    out[k].conditional_entropy = sums[3 * k + 1] * inv_n;
    out[k].rate = (sums[3 * k + 2] - sums[3 * k]) * inv_n / (2.0 * log_step);
  }
  return out;
}

double sequence_nll(std::span<const TokenId> tokens, const ToyDistribution& dist) {
  return -dist.log_prob(tokens);
}

void exact_denoiser_batch(const ToyDistribution& dist, std::span<const double> x, double sigma,
                          std::span<double> out) {
  const std::size_t S = dist.bit_length();
  if (x.size() % S != 0 || out.size() != x.size()) {
    throw ShapeError("batched denoiser input is not a whole number of sequences");
  }
  const auto table = codeword_table(dist.vocab());
  const bool chain = dist.has_chain_structure();
  for (std::size_t row = 0; row < x.size() / S; ++row) {
    const auto xr = x.subspan(row * S, S);
    const auto d = chain ? chain_denoiser(xr, sigma, dist, table) : enumerate_denoiser(xr, sigma, dist);
    std::copy(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(row * S));
  }
}

}  // namespace bitdiff
