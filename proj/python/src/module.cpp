// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/boundary_profiler.hpp"
#include "bitdiff/cli.hpp"
#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/errors.hpp"
#include "bitdiff/metrics.hpp"
#include "bitdiff/oracle.hpp"
#include "bitdiff/sampler.hpp"
#include "bitdiff/schedule.hpp"

namespace py = pybind11;
using namespace bitdiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> as_span(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_bitdiff, m) {
  m.doc() = "Bitstream diffusion core: codec, exact oracle, schedules and samplers.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_MemoryError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("bits_per_token", &bits_per_token, py::arg("vocab_size"));

  m.def(
      "encode",
      [](const std::vector<TokenId>& ids, std::uint32_t vocab) {
        return to_array(encode(ids, VocabSpec::for_vocab(vocab)).values);
      },
      py::arg("ids"), py::arg("vocab"), "Token ids to MSB-first {0,1} bits.");

  m.def(
      "decode",
      [](const Array& probs, std::uint32_t vocab) {
        const auto r = decode(AnalogBits{{probs.data(), probs.data() + probs.size()}, BitKind::probability},
                              VocabSpec::for_vocab(vocab));
        return py::make_tuple(r.tokens, r.invalid_count);
      },
      py::arg("probabilities"), py::arg("vocab"),
      "Threshold at 0.5 and read groups of bits; returns (ids, invalid_count).");

  m.def(
      "matched_filter_logit",
      [](double x, double sigma) { return matched_filter_logit(x, sigma, DiffusionSpec{}); },
      py::arg("x"), py::arg("sigma"));

  m.def(
      "karras_grid",
      [](std::size_t n, double sigma_min, double sigma_max, double rho) {
        DiffusionSpec spec;
        spec.sigma_min = sigma_min;
        spec.sigma_max = sigma_max;
        spec.rho = rho;
        return to_array(karras_grid(n, spec));
      },
      py::arg("n"), py::arg("sigma_min") = 0.002, py::arg("sigma_max") = 80.0, py::arg("rho") = 7.0);

  py::class_<ToyDistribution>(m, "ToyDistribution")
      .def_static(
          "iid_uniform",
          [](std::uint32_t vocab, std::size_t length) {
            return ToyDistribution::iid_uniform(VocabSpec::for_vocab(vocab), length);
          },
          py::arg("vocab"), py::arg("length"))
      .def_static(
          "cyclic_markov",
          [](std::uint32_t vocab, std::size_t length, double stay) {
            return ToyDistribution::cyclic_markov(VocabSpec::for_vocab(vocab), length, stay);
          },
          py::arg("vocab"), py::arg("length"), py::arg("stay") = 0.9)
      .def_property_readonly("vocab", [](const ToyDistribution& d) { return d.vocab().vocab_size; })
      .def_property_readonly("length", &ToyDistribution::length)
      .def_property_readonly("bit_length", &ToyDistribution::bit_length)
      .def("entropy", &ToyDistribution::entropy)
      .def("unigram_marginal", &ToyDistribution::unigram_marginal)
      .def("sample", [](const ToyDistribution& d, std::uint64_t seed, std::size_t n) {
        Rng rng(seed);
        std::vector<TokenSequence> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(d.sample(rng));
        return out;
      }, py::arg("seed"), py::arg("n"))
      .def("nll", [](const ToyDistribution& d, const TokenSequence& t) { return sequence_nll(t, d); })
      .def("__repr__", [](const ToyDistribution& d) { return "<ToyDistribution " + d.serialize() + ">"; });

  m.def(
      "exact_denoiser",
      [](const Array& x, double sigma, const ToyDistribution& dist) {
        return to_array(exact_denoiser(as_span(x), sigma, dist));
      },
      py::arg("x"), py::arg("sigma"), py::arg("dist"));

  m.def(
      "exact_score",
      [](const Array& x, double sigma, const ToyDistribution& dist) {
        return to_array(exact_score(as_span(x), sigma, dist));
      },
      py::arg("x"), py::arg("sigma"), py::arg("dist"));

  m.def(
      "oracle_sample",
      [](const ToyDistribution& dist, std::size_t count, std::size_t nfe, double s_churn,
         std::uint64_t seed) {
        const DiffusionSpec spec;
        SamplerConfig cfg;
        cfg.nfe = nfe;
        cfg.grid = GridKind::karras;
        cfg.s_churn = s_churn;
        cfg.seed = seed;
        const BatchDenoiser den = [&dist](std::span<const double> x, std::size_t, double sigma,
                                          std::span<const double>, std::span<double> out) {
          exact_denoiser_batch(dist, x, sigma, out);
        };
        const auto grid = make_grid(cfg, spec, nullptr);
        py::gil_scoped_release release;
        const auto res = generate(den, cfg, grid, nullptr, count, dist.bit_length(), spec);
        return decode_samples(res.probabilities, count, dist.vocab()).sequences;
      },
      py::arg("dist"), py::arg("count"), py::arg("nfe") = 64, py::arg("s_churn") = 0.0,
      py::arg("seed") = 0, "Sample token sequences with the exact denoiser on a Karras grid.");

  m.def(
      "unigram_tv",
      [](const std::vector<TokenSequence>& samples, const ToyDistribution& dist) {
        SampleSet s;
        s.sequences = samples;
        return tv_distance(s, dist, TvLevel::unigram);
      },
      py::arg("samples"), py::arg("dist"));

  m.def(
      "logit_counts",
      [](std::uint64_t batch, std::uint64_t tokens, std::uint64_t vocab) {
        const auto c = logit_counts({"", batch, tokens, vocab, 768, 2});
        py::dict d;
        d["token_logits"] = c.token_logits;
        d["bit_logits"] = c.bit_logits;
        d["bits"] = c.bits;
        d["reduction"] = c.reduction;
        return d;
      },
      py::arg("batch"), py::arg("tokens"), py::arg("vocab"));

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one CLI command; returns (exit_code, stdout, stderr).");
}
