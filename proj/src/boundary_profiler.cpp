// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/boundary_profiler.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <new>
#include <sstream>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/errors.hpp"
#include "bitdiff/rng.hpp"

namespace bitdiff {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatF random_matrix(std::uint64_t rows, std::uint64_t cols, float scale, Rng& rng) {
  MatF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * static_cast<float>(rng.normal());
  return m;
}

}  // namespace

void BoundaryCase::validate() const {
  if (batch == 0 || tokens == 0 || width == 0 || bytes_per_element == 0) {
    throw ArgumentError("boundary case sizes must be positive");
  }
  if (vocab < 2) throw ArgumentError("boundary case needs V >= 2");
}

LogitCounts logit_counts(const BoundaryCase& c) {
  c.validate();
  LogitCounts out;
  out.bits = bits_per_token(c.vocab);
  out.token_logits = c.batch * c.tokens * c.vocab;
  out.bit_logits = c.batch * c.tokens * out.bits;
  out.reduction_exact = static_cast<double>(c.vocab) / out.bits;
  out.reduction = static_cast<std::uint64_t>(std::llround(out.reduction_exact));
  out.token_bytes = out.token_logits * c.bytes_per_element;
  out.bit_bytes = out.bit_logits * c.bytes_per_element;
  return out;
}

std::vector<BoundaryCase> reference_logit_cases() {
  return {
      {"LM1B", 512, 128, 30522, 768, 2},
      {"OWT", 128, 1024, 65536, 768, 2},
      {"OWT global batch", 512, 1024, 65536, 768, 2},
      {"Long context", 16, 8192, 65536, 768, 2},
      {"Large vocabulary", 16, 4096, 128000, 2048, 2},
      {"Large model/vocab", 8, 4096, 128000, 2048, 2},
  };
}

std::string format_count(std::uint64_t count) {
  if (count == 0) return "0";
  int exponent = static_cast<int>(std::floor(std::log10(static_cast<double>(count))));
  double mantissa = static_cast<double>(count) / std::pow(10.0, exponent);
  mantissa = std::round(mantissa * 100.0) / 100.0;
  if (mantissa >= 10.0) {
    mantissa /= 10.0;
    ++exponent;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2fe%d", mantissa, exponent);
  return buf;
}

std::string logit_table_markdown(const std::vector<BoundaryCase>& cases) {
  std::ostringstream out;
  out << "| Setting | B | T | V | Token logits BTV | Bit logits BTm | Reduction |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& c : cases) {
    const auto n = logit_counts(c);
    out << "| " << c.label << " | " << c.batch << " | " << c.tokens << " | " << c.vocab << " | "
        << format_count(n.token_logits) << " | " << format_count(n.bit_logits) << " | "
        << n.reduction << "x |\n";
  }
  return out.str();
}

std::string logit_table_csv(const std::vector<BoundaryCase>& cases) {
  std::ostringstream out;
  out << "setting,B,T,V,m,token_logits,bit_logits,reduction,token_bytes,bit_bytes\n";
  for (const auto& c : cases) {
    const auto n = logit_counts(c);
    out << '"' << c.label << "\"," << c.batch << ',' << c.tokens << ',' << c.vocab << ','
        << n.bits << ',' << n.token_logits << ',' << n.bit_logits << ',' << n.reduction << ','
        << n.token_bytes << ',' << n.bit_bytes << '\n';
  }
  return out.str();
}

const char* boundary_name(BoundaryKind kind) {
  return kind == BoundaryKind::token ? "token" : "bitstream";
}

BenchResult micro_bench(const BoundaryCase& c, BoundaryKind kind, std::size_t reps,
                        std::uint64_t seed) {
  c.validate();
  if (reps < 3) throw ArgumentError("micro-benchmark needs at least 3 timed repetitions");
  BenchResult result;
  result.kind = kind;
  result.reps = reps;
  const auto counts = logit_counts(c);
  result.boundary_bytes = kind == BoundaryKind::token ? counts.token_bytes : counts.bit_bytes;
  const std::uint64_t rows = c.batch * c.tokens;
  const std::uint64_t out_cols = kind == BoundaryKind::token ? c.vocab : counts.bits;
  try {
    Rng rng(seed);
    const MatF h = random_matrix(rows, c.width, 1.0f, rng);
    const MatF w = random_matrix(c.width, out_cols, 1.0f / std::sqrt(static_cast<float>(c.width)), rng);
    std::vector<std::uint32_t> targets(rows);
    MatF bit_targets;
    if (kind == BoundaryKind::token) {
      for (auto& t : targets) t = static_cast<std::uint32_t>(rng.below(c.vocab));
    } else {
      bit_targets = MatF(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_cols));
      for (Eigen::Index i = 0; i < bit_targets.size(); ++i) {
        bit_targets.data()[i] = static_cast<float>(rng.below(2));
      }
    }
    MatF logits(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_cols));

    auto step = [&]() -> double {
      logits.noalias() = h * w;
      double loss = 0.0;
      if (kind == BoundaryKind::token) {
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
          const float mx = logits.row(r).maxCoeff();
          const float lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
          loss += lse - logits(r, static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]));
        }
      } else {
        const MatF probs = (1.0f / (1.0f + (-logits.array()).exp())).matrix();
        loss = (probs - bit_targets).squaredNorm();
      }
      return loss / static_cast<double>(rows);
    };

    result.checksum = step();
    std::vector<double> times;
    times.reserve(reps);
    for (std::size_t i = 0; i < reps; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      result.checksum = step();
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double sum = 0.0;
    for (double t : times) sum += t;
    result.mean_ms = sum / static_cast<double>(reps);
    double var = 0.0;
    for (double t : times) var += (t - result.mean_ms) * (t - result.mean_ms);
    result.std_ms = std::sqrt(var / static_cast<double>(reps - 1));
  } catch (const std::bad_alloc&) {
    result.ok = false;
    result.error = "capacity: could not allocate the " + std::string(boundary_name(kind)) +
                   " boundary tensors";
  }
  return result;
}

std::string bench_table_markdown(const std::vector<std::pair<BoundaryCase, BenchResult>>& rows) {
  std::ostringstream out;
  out << "| Setup | Boundary | B | T | V | d | Logit bytes | Step time (ms) |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& [c, r] : rows) {
    out << "| " << c.label << " | " << boundary_name(r.kind) << " | " << c.batch << " | "
        << c.tokens << " | " << c.vocab << " | " << c.width << " | " << r.boundary_bytes << " | ";
    if (r.ok) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3f +- %.3f", r.mean_ms, r.std_ms);
      out << buf;
    } else {
      out << r.error;
    }
    out << " |\n";
  }
  return out.str();
}

}  // namespace bitdiff
