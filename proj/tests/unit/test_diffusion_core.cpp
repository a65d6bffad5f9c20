// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "bitdiff/diffusion_core.hpp"

using namespace bitdiff;
using doctest::Approx;

TEST_CASE("matched filter logit") {
  const DiffusionSpec spec;
  CHECK(matched_filter_logit(0.5, 0.3, spec) == 0.0);
  CHECK(matched_filter_logit(1.0, 0.5, spec) == Approx(2.0).epsilon(1e-15));
  CHECK(sigmoid(2.0) == Approx(0.880797).epsilon(1e-6));
  CHECK(matched_filter_logit(2.0, 0.1, spec) == 30.0);
  CHECK(matched_filter_logit(-2.0, 0.1, spec) == -30.0);
}

TEST_CASE("residual combination") {
  const DiffusionSpec spec;
  const std::vector<double> x{0.5, 1.0, -0.3};
  const double sigma = 0.5;
  const std::vector<double> zero(3, 0.0);
  const auto mf = combine_to_probabilities(zero, x, sigma, spec);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(mf.probabilities[i] == sigmoid(matched_filter_logit(x[i], sigma, spec)));
  }
  const std::vector<double> big{50.0};
  const std::vector<double> centre{0.5};
  const auto sat = combine_to_probabilities(big, centre, sigma, spec);
  CHECK(sat.logits[0] == 50.0);
  CHECK(sat.probabilities[0] > 0.99);

  std::vector<double> cancel(3);
  for (std::size_t i = 0; i < 3; ++i) cancel[i] = -matched_filter_logit(x[i], sigma, spec);
  for (double p : combine_to_probabilities(cancel, x, sigma, spec).probabilities) CHECK(p == 0.5);
}

TEST_CASE("score from denoiser") {
  const std::vector<double> x{0.3, 1.2};
  for (double s : score_from_denoiser(x, x, 0.7)) CHECK(s == 0.0);
  const std::vector<double> d{0.88}, xx{1.0};
  CHECK(score_from_denoiser(d, xx, 0.5)[0] == Approx(-0.48).epsilon(1e-12));
}

TEST_CASE("weights and scales") {
  const DiffusionSpec spec;
  CHECK(edm_weight(0.5, spec) == Approx(8.0).epsilon(1e-14));
  CHECK(edm_weight(1.0, spec) == Approx(5.0).epsilon(1e-14));
  CHECK(edm_weight(1e6, spec) == Approx(4.0).epsilon(1e-9));
  CHECK(input_scale(0.0, spec) == Approx(2.0).epsilon(1e-14));
  CHECK(input_scale(0.5, spec) == Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(input_scale(1e9, spec) < 1e-8);
}

TEST_CASE("denoising loss") {
  const DiffusionSpec spec;
  const std::vector<double> x0{1.0, 0.0};
  const auto perfect = sm_loss(x0, x0, 0.5, spec);
  CHECK(perfect.weighted == 0.0);
  CHECK(perfect.unweighted == 0.0);
  const std::vector<double> half{0.5, 0.5};
  CHECK(sm_loss(half, x0, 0.5, spec).unweighted == Approx(0.25));
  const std::vector<double> d{0.9, 0.2};
  const auto l = sm_loss(d, x0, 0.5, spec);
  CHECK(l.unweighted == Approx(0.025).epsilon(1e-12));
  CHECK(l.weighted == Approx(0.2).epsilon(1e-12));
}

TEST_CASE("forward corruption") {
  const DiffusionSpec spec;
  const AnalogBits x0{std::vector<double>(100000, 0.0), BitKind::clean};
  Rng a(5), b(5);
  const auto x = corrupt(x0, 1.0, spec, a);
  CHECK(x.values == corrupt(x0, 1.0, spec, b).values);
  double mean = 0.0, var = 0.0;
  for (double v : x.values) mean += v;
  mean /= 1e5;
  for (double v : x.values) var += (v - mean) * (v - mean);
  var /= 1e5;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);

  Rng c(6);
  const AnalogBits bits{{1.0, 0.0, 1.0}, BitKind::clean};
  const auto tiny = corrupt(bits, spec.sigma_min, spec, c);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(tiny.values[i] - bits.values[i]) < 0.02);
  CHECK_THROWS(corrupt(bits, 0.0, spec, c));
}
