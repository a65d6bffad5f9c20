// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "bitdiff/boundary_profiler.hpp"

using namespace bitdiff;

TEST_CASE("logit counts") {
  const auto lm1b = logit_counts({"LM1B", 512, 128, 30522, 768, 2});
  CHECK(lm1b.token_logits == 2000289792ULL);
  CHECK(lm1b.bit_logits == 983040ULL);
  CHECK(lm1b.bits == 15);
  CHECK(lm1b.reduction == 2035);
  CHECK(format_count(lm1b.token_logits) == "2.00e9");
  CHECK(format_count(lm1b.bit_logits) == "9.83e5");
  CHECK(logit_counts({"OWT", 128, 1024, 65536, 768, 2}).reduction == 4096);
  CHECK(logit_counts({"big", 16, 4096, 128000, 2048, 2}).reduction == 7529);
}

TEST_CASE("tables") {
  const auto md = logit_table_markdown(reference_logit_cases());
  CHECK(md.find("2035") != std::string::npos);
  CHECK(md.find("7529") != std::string::npos);
  const auto csv = logit_table_csv(reference_logit_cases());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("micro benchmark runs on a small case") {
  const BoundaryCase c{"small", 1, 64, 512, 16, 2};
  const auto tok = micro_bench(c, BoundaryKind::token, 3, 1);
  const auto bit = micro_bench(c, BoundaryKind::bitstream, 3, 1);
  CHECK(tok.ok);
  CHECK(bit.ok);
  CHECK(tok.boundary_bytes == 64ULL * 512 * 2);
  CHECK(bit.boundary_bytes == 64ULL * 9 * 2);
  CHECK_THROWS(micro_bench(c, BoundaryKind::token, 2, 1));
}
