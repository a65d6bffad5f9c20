// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/errors.hpp"

using namespace bitdiff;

TEST_CASE("bits per token") {
  CHECK(bits_per_token(30522) == 15);
  CHECK(bits_per_token(65536) == 16);
  CHECK(bits_per_token(2) == 1);
  CHECK(bits_per_token(8) == 3);
  CHECK(bits_per_token(9) == 4);
  CHECK_THROWS_AS(bits_per_token(1), ArgumentError);
}

TEST_CASE("encode is MSB first") {
  const auto v8 = VocabSpec::for_vocab(8);
  const TokenSequence five{5};
  CHECK(encode(five, v8).values == std::vector<double>{1, 0, 1});
  const TokenSequence edges{0, 7};
  CHECK(encode(edges, v8).values == std::vector<double>{0, 0, 0, 1, 1, 1});

  const TokenSequence one{1};
  std::vector<double> expected(15, 0.0);
  expected.back() = 1.0;
  CHECK(encode(one, VocabSpec::for_vocab(30522)).values == expected);

  const TokenSequence too_big{8};
  CHECK_THROWS(encode(too_big, v8));
}

TEST_CASE("decode thresholds and falls back on invalid codes") {
  const auto v8 = VocabSpec::for_vocab(8);
  const auto r = decode(AnalogBits{{0.9, 0.2, 0.7}, BitKind::probability}, v8);
  CHECK(r.tokens == TokenSequence{5});
  CHECK(r.invalid_count == 0);

  const auto bert = VocabSpec::for_vocab(30522);
  const auto bad = decode(AnalogBits{std::vector<double>(15, 1.0), BitKind::probability}, bert);
  CHECK(bad.tokens == TokenSequence{0});
  CHECK(bad.invalid_count == 1);

  // logits threshold at zero
  const std::vector<double> logits{3.0, -1.0, 0.0};
  CHECK(decode_logits(logits, v8).tokens == TokenSequence{5});

  CHECK_THROWS_AS(decode_values(std::vector<double>{1.0, 0.0}, v8), ShapeError);
}

TEST_CASE("roundtrip on a small vocabulary") {
  const auto v = VocabSpec::for_vocab(1000);
  TokenSequence ids(1000);
  for (TokenId i = 0; i < 1000; ++i) ids[i] = i;
  CHECK(decode(encode(ids, v), v).tokens == ids);
}
