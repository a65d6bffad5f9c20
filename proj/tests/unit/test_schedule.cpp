// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "bitdiff/errors.hpp"
#include "bitdiff/schedule.hpp"

using namespace bitdiff;
using doctest::Approx;

TEST_CASE("gate") {
  CHECK(gate(0.1, 0.1, 3.0) == Approx(0.5));
  CHECK(gate(10.0, 0.0, 3.0) == 1.0);
}

TEST_CASE("bin rates from records") {
  ScheduleState s;
  CHECK_FALSE(s.initialized());
  CHECK_THROWS_AS(s.entropy_grid(4), UninitializedScheduleError);
  s.record(1.0, 0.25);
  for (double r : s.bin_rates()) CHECK(r == Approx(0.25 / (1.0 + 1e-8)).epsilon(1e-15));

  ScheduleState t;
  t.record(0.1, 0.01);
  CHECK(t.bin_rates()[t.bin_of(std::log(0.1))] == Approx(1.0).epsilon(1e-6));
}

TEST_CASE("fifo capacity") {
  ScheduleConfig c;
  c.capacity = 10;
  ScheduleState s(c);
  for (int i = 0; i < 25; ++i) s.record(1.0, 0.1);
  CHECK(s.size() == 10);
}

TEST_CASE("flat rates give a gate-shaped density") {
  ScheduleConfig c;
  c.eps = 0.0;
  ScheduleState s(c);
  for (double u = -6.0; u < 4.3; u += 0.05) s.record(std::exp(u), 0.3 * std::exp(2.0 * u));
  const double g1 = gate(1.0, 0.1, 3.0), g2 = gate(0.05, 0.1, 3.0);
  CHECK(s.density(std::log(1.0)) / s.density(std::log(0.05)) == Approx(g1 / g2).epsilon(1e-9));
}

TEST_CASE("karras grid") {
  const DiffusionSpec spec;
  CHECK(karras_grid(1, spec) == std::vector<double>{80.0, 0.002});
  const auto g2 = karras_grid(2, spec);
  CHECK(g2[1] == Approx(2.5152189761471586).epsilon(1e-14));
  DiffusionSpec linear = spec;
  linear.rho = 1.0;
  CHECK(karras_grid(2, linear)[1] == Approx(40.001).epsilon(1e-12));
}

TEST_CASE("log-uniform density gives geometric spacing") {
  ScheduleConfig c;
  c.sigma_min = 0.01;
  c.sigma_max = 100.0;
  c.gate_c = 0.0;
  ScheduleState s(c);
  s.record(1.0, 0.5);
  const auto g = s.entropy_grid(2);
  CHECK(g[0] == 100.0);
  CHECK(g[1] == Approx(1.0).epsilon(1e-12));
  CHECK(g[2] == 0.01);
  CHECK(s.quantile(0.0) == 0.01);
  CHECK(s.quantile(1.0) == 100.0);
  CHECK(s.quantile(0.5) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-bin state with three quarters of the mass below sigma 1") {
  ScheduleConfig c;
  c.sigma_min = 0.01;
  c.sigma_max = 100.0;
  c.gate_c = 0.0;
  c.alpha = 1.0;
  c.bins = 2;
  c.eps = 0.0;
  ScheduleState s(c);
  s.record(0.1, 3.0 * 0.01);
  s.record(10.0, 100.0);
  CHECK(s.quantile(0.75) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single populated bin confines training draws") {
  ScheduleConfig c;
  c.warmup_steps = 0;
  c.transition_steps = 0;
  ScheduleState s(c);
  const std::size_t target = 40;
  for (std::size_t k = 0; k < c.bins; ++k) {
    const double u = 0.5 * (s.bin_lower(k) + s.bin_upper(k));
    s.record(std::exp(u), k == target ? 1.0 : 0.0);
  }
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    CHECK(s.bin_of(std::log(s.sample_training_sigma(rng, 10))) == target);
  }
  const auto g = s.entropy_grid(8);
  for (std::size_t i = 1; i < 8; ++i) CHECK(s.bin_of(std::log(g[i])) == target);
}

TEST_CASE("warmup draws are log-normal") {
  ScheduleState s;
  s.record(1.0, 0.1);
  Rng a(9), b(9);
  CHECK(s.sample_training_sigma(a, 0) == s.sample_lognormal(b));
}

TEST_CASE("snapshot rows") {
  ScheduleState s;
  s.record(0.5, 0.1);
  const auto rows = s.snapshot();
  CHECK(rows.size() == 64);
  double q = 0.0;
  for (const auto& r : rows) q += r.probability;
  CHECK(q == Approx(1.0).epsilon(1e-12));
  CHECK(s.snapshot_csv().rfind("sigma_center,", 0) == 0);
}
