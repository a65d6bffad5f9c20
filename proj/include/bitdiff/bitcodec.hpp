// SPDX-License-Identifier: Apache-2.0
//
// Token ids <-> fixed-width bitstreams. Each id becomes m = ceil(log2 V)
// bits, most significant bit first, concatenated in token order.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bitdiff {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

/// Number of bits needed to address V ids. Throws ArgumentError for V < 2.
std::uint32_t bits_per_token(std::uint64_t vocab_size);

struct VocabSpec {
  std::uint32_t vocab_size = 2;
  std::uint32_t bits = 1;  // always bits_per_token(vocab_size)

  static VocabSpec for_vocab(std::uint64_t vocab_size);
  /// 2^bits; codes in [vocab_size, code_space) are invalid on decode.
  std::uint64_t code_space() const { return std::uint64_t{1} << bits; }

  friend bool operator==(const VocabSpec&, const VocabSpec&) = default;
};

enum class BitKind { clean, noisy, probability };

struct AnalogBits {
  std::vector<double> values;
  BitKind kind = BitKind::clean;

  std::size_t size() const { return values.size(); }
};

struct DecodeResult {
  TokenSequence tokens;
  std::size_t invalid_count = 0;
};

AnalogBits encode(std::span<const TokenId> ids, const VocabSpec& spec);

/// Thresholds at 0.5 (ties go to 1). For probabilities this is p >= 1/2; for
/// clean or noisy analog bits it is the data center. Codes >= V decode to
/// id 0 and are counted in invalid_count.
DecodeResult decode(const AnalogBits& bits, const VocabSpec& spec);
DecodeResult decode_values(std::span<const double> values, const VocabSpec& spec);

/// Same as decode, but thresholds raw logits at 0.
DecodeResult decode_logits(std::span<const double> logits, const VocabSpec& spec);

}  // namespace bitdiff
