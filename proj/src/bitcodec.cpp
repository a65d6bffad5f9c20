// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/bitcodec.hpp"

#include <bit>
#include <string>

#include "bitdiff/errors.hpp"

namespace bitdiff {

std::uint32_t bits_per_token(std::uint64_t vocab_size) {
  if (vocab_size < 2) {
    throw ArgumentError("invalid vocabulary: V must be >= 2, got " + std::to_string(vocab_size));
  }
  return static_cast<std::uint32_t>(std::bit_width(vocab_size - 1));
}

VocabSpec VocabSpec::for_vocab(std::uint64_t vocab_size) {
  const auto bits = bits_per_token(vocab_size);
  if (bits > 31) {
    throw ArgumentError("vocabulary too large for 32-bit token ids");
  }
  return VocabSpec{static_cast<std::uint32_t>(vocab_size), bits};
}

AnalogBits encode(std::span<const TokenId> ids, const VocabSpec& spec) {
  AnalogBits out;
  out.kind = BitKind::clean;
  out.values.resize(ids.size() * spec.bits);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const TokenId id = ids[t];
    if (id >= spec.vocab_size) {
      throw ArgumentError("token id " + std::to_string(id) + " out of range for V=" +
                          std::to_string(spec.vocab_size));
    }
    for (std::uint32_t j = 0; j < spec.bits; ++j) {
      const std::uint32_t shift = spec.bits - 1 - j;
      out.values[t * spec.bits + j] = static_cast<double>((id >> shift) & 1U);
    }
  }
  return out;
}

namespace {

template <typename IsOne>
DecodeResult decode_with(std::span<const double> values, const VocabSpec& spec, IsOne is_one) {
  if (spec.bits == 0 || values.size() % spec.bits != 0) {
    throw ShapeError("bit length " + std::to_string(values.size()) + " not divisible by m=" +
                     std::to_string(spec.bits));
  }
  DecodeResult out;
  const std::size_t tokens = values.size() / spec.bits;
  out.tokens.resize(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    std::uint64_t code = 0;
    for (std::uint32_t j = 0; j < spec.bits; ++j) {
      code = (code << 1) | (is_one(values[t * spec.bits + j]) ? 1U : 0U);
    }
    if (code >= spec.vocab_size) {
      out.tokens[t] = 0;
      ++out.invalid_count;
    } else {
      out.tokens[t] = static_cast<TokenId>(code);
    }
  }
  return out;
}

}  // namespace

DecodeResult decode_values(std::span<const double> values, const VocabSpec& spec) {
  return decode_with(values, spec, [](double v) { return v >= 0.5; });
}

DecodeResult decode(const AnalogBits& bits, const VocabSpec& spec) {
  return decode_values(bits.values, spec);
}

DecodeResult decode_logits(std::span<const double> logits, const VocabSpec& spec) {
  return decode_with(logits, spec, [](double v) { return v >= 0.0; });
}

}  // namespace bitdiff
