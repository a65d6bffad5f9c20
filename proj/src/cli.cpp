// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "bitdiff/boundary_profiler.hpp"
#include "bitdiff/checkpoint.hpp"
#include "bitdiff/errors.hpp"
#include "bitdiff/experiment_config.hpp"
#include "bitdiff/format.hpp"
#include "bitdiff/metrics.hpp"
#include "bitdiff/oracle.hpp"
#include "bitdiff/sampler.hpp"

namespace bitdiff {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  std::string out_dir;
  bool oracle = false;
  std::string nfe;
  std::string s_churn;
  std::string eta;
  std::string window;
  std::string grid;
  bool deterministic = false;
  std::string type;
  std::string checkpoint;
  bool bench = false;
};

struct Context {
  ExperimentConfig cfg;
  Options opt;
  std::ostream& out;
  std::ostream& err;

  fs::path dir() const { return fs::path(cfg.output_dir()); }
};

ExperimentConfig build_config(const Options& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? ExperimentConfig()
                                                 : ExperimentConfig::load(opt.config_path);
  for (const auto& o : opt.overrides) cfg.apply_override(o);
  if (!opt.seed.empty()) cfg.set("seed.global", opt.seed);
  if (!opt.out_dir.empty()) cfg.set("output.dir", opt.out_dir);
  if (!opt.nfe.empty()) cfg.set("sampler.nfe", opt.nfe);
  if (!opt.s_churn.empty()) cfg.set("sampler.s_churn", opt.s_churn);
  if (!opt.eta.empty()) cfg.set("sampler.eta", opt.eta);
  if (!opt.grid.empty()) cfg.set("sampler.grid", opt.grid);
  if (!opt.window.empty()) {
    const auto comma = opt.window.find(',');
    if (comma == std::string::npos) throw ConfigError("--window expects LO,HI");
    cfg.set("sampler.window_lo", opt.window.substr(0, comma));
    cfg.set("sampler.window_hi", opt.window.substr(comma + 1));
  }
  if (opt.deterministic) cfg.set("sampler.s_churn", "0");
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw MissingFileError("cannot write " + path.string());
  return f;
}

void write_run_header(const Context& ctx) {
  fs::create_directories(ctx.dir());
  open_output(ctx.dir() / "config.txt") << ctx.cfg.canonical();
  open_output(ctx.dir() / "config.digest") << ctx.cfg.digest() << '\n';
}

// Denoiser plus the schedule and metadata sampling needs.
struct SamplingSetup {
  ToyDistribution dist;
  DiffusionSpec spec;
  std::shared_ptr<Parameters> params;
  std::shared_ptr<ScheduleState> schedule;
  BatchDenoiser denoiser;
  std::string source;  // "oracle" or checkpoint path
};

std::string checkpoint_path(const Context& ctx) {
  return ctx.opt.checkpoint.empty() ? (ctx.dir() / "checkpoint.bin").string() : ctx.opt.checkpoint;
}

SamplingSetup make_setup(const Context& ctx, bool need_denoiser) {
  SamplingSetup s{ctx.cfg.distribution(), ctx.cfg.diffusion(), nullptr, nullptr, {}, ""};
  const auto schedule_cfg = ctx.cfg.schedule();
  if (ctx.opt.oracle || !need_denoiser) {
    if (need_denoiser && !s.dist.has_chain_structure() && !s.dist.enumerable()) {
      throw CapacityError("oracle denoiser needs an enumerable or chain-structured generator");
    }
    if (ctx.opt.checkpoint.empty()) {
      Rng rng(derive_seed(ctx.cfg.seeds().global, 21));
      s.schedule = std::make_shared<ScheduleState>(calibrate_schedule(
          s.dist, schedule_cfg, s.spec, ctx.cfg.get_count("schedule.calibration_draws"), rng));
      s.source = "oracle";
    }
    const ToyDistribution* dist = &s.dist;
    s.denoiser = [dist](std::span<const double> x, std::size_t, double sigma,
                        std::span<const double>, std::span<double> out) {
      exact_denoiser_batch(*dist, x, sigma, out);
    };
  }
  if (!ctx.opt.oracle && (need_denoiser || !ctx.opt.checkpoint.empty())) {
    auto ck = load_checkpoint(checkpoint_path(ctx));
    if (ck.vocab != s.dist.vocab() || ck.tokens != s.dist.length()) {
      throw ConfigError("checkpoint was trained on a different vocabulary or length");
    }
    s.spec = ck.spec;
    s.schedule = std::make_shared<ScheduleState>(schedule_cfg);
    for (const auto& [sigma, error] : ck.schedule_records) s.schedule->record(sigma, error);
    s.params = std::make_shared<Parameters>(std::move(ck.params));
    const Parameters* params = s.params.get();
    const DiffusionSpec spec = s.spec;
    s.denoiser = [params, spec](std::span<const double> x, std::size_t batch, double sigma,
                                std::span<const double> sc, std::span<double> out) {
      denoise_batch(*params, x, batch, sigma, sc, out, spec);
    };
    s.source = checkpoint_path(ctx);
  }
  return s;
}

struct SampleRun {
  SampleSet samples;
  std::vector<StepDiagnostics> trace;
  std::size_t nfe = 0;
};

SampleRun draw_samples(const SamplingSetup& setup, const SamplerConfig& scfg,
                       std::span<const double> grid, std::size_t count, std::size_t chunk) {
  if (count == 0 || chunk == 0) throw ConfigError("sampler.samples and sampler.batch must be positive");
  SampleRun run;
  const std::size_t S = setup.dist.bit_length();
  for (std::size_t first = 0; first < count; first += chunk) {
    const std::size_t n = std::min(chunk, count - first);
    auto res = generate(setup.denoiser, scfg, grid, setup.schedule.get(), n, S, setup.spec, first);
    auto part = decode_samples(res.probabilities, n, setup.dist.vocab());
    for (std::size_t i = 0; i < n; ++i) {
      run.samples.sequences.push_back(std::move(part.sequences[i]));
      run.samples.invalid_counts.push_back(part.invalid_counts[i]);
    }
    if (first == 0) {
      run.trace = std::move(res.trace);
      run.nfe = res.nfe;
    }
  }
  run.samples.seed = scfg.seed;
  return run;
}

struct SampleMetrics {
  double token_entropy = 0.0;
  double unigram_tv = 0.0;
  double bigram_tv = std::nan("");
  double sequence_tv = std::nan("");
  NllResult nll;
  double invalid_rate = 0.0;
};

SampleMetrics evaluate(const SampleSet& samples, const ToyDistribution& dist) {
  SampleMetrics m;
  m.token_entropy = token_entropy(samples);
  m.unigram_tv = tv_distance(samples, dist, TvLevel::unigram);
  if (dist.length() >= 2) m.bigram_tv = tv_distance(samples, dist, TvLevel::bigram);
  if (dist.enumerable()) m.sequence_tv = tv_distance(samples, dist, TvLevel::full_sequence);
  m.nll = oracle_nll(samples, dist);
  std::size_t invalid = 0;
  for (auto c : samples.invalid_counts) invalid += c > 0 ? 1 : 0;
  m.invalid_rate = static_cast<double>(invalid) / static_cast<double>(samples.size());
  return m;
}

void write_metrics(std::ostream& f, const SampleMetrics& m, std::size_t n,
                   const std::string& digest, std::uint64_t seed) {
  f << metric_json("token_entropy", m.token_entropy, n, digest, seed) << '\n';
  f << metric_json("unigram_tv", m.unigram_tv, n, digest, seed) << '\n';
  if (!std::isnan(m.bigram_tv)) f << metric_json("bigram_tv", m.bigram_tv, n, digest, seed) << '\n';
  if (!std::isnan(m.sequence_tv)) {
    f << metric_json("full_sequence_tv", m.sequence_tv, n, digest, seed) << '\n';
  }
  f << metric_json("oracle_nll", m.nll.nll_per_token, m.nll.scored, digest, seed) << '\n';
  f << metric_json("zero_probability", static_cast<double>(m.nll.zero_probability), n, digest, seed)
    << '\n';
  f << metric_json("invalid_rate", m.invalid_rate, n, digest, seed) << '\n';
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(Context& ctx) {
  write_run_header(ctx);
  const auto dist = ctx.cfg.distribution();
  Rng rng(ctx.cfg.seeds().data);
  const std::size_t n = ctx.cfg.get_count("data.dataset_size");
  std::vector<TokenSequence> data;
  data.reserve(n);
  for (std::size_t i = 0; i < n; ++i) data.push_back(dist.sample(rng));
  open_output(ctx.dir() / "distribution.txt") << dist.serialize();
  write_dataset((ctx.dir() / "dataset.txt").string(), data);
  ctx.out << "wrote " << n << " sequences (V=" << dist.vocab().vocab_size << ", T=" << dist.length()
          << ") to " << (ctx.dir() / "dataset.txt").string() << '\n';
  if (dist.enumerable()) {
    ctx.out << "entropy_per_token " << format_double(dist.entropy() / dist.length()) << '\n';
  }
  return kExitOk;
}

int cmd_train(Context& ctx) {
  write_run_header(ctx);
  const auto dist = ctx.cfg.distribution();
  const auto spec = ctx.cfg.diffusion();
  const auto vocab = dist.vocab();
  const auto seeds = ctx.cfg.seeds();
  const auto net = ctx.cfg.net(vocab);
  const auto tcfg = ctx.cfg.train(seeds.train);
  ScheduleState schedule(ctx.cfg.schedule());
  const auto& dataset_path = ctx.cfg.get("data.dataset");
  const BatchSource source =
      dataset_path.empty() ? distribution_source(dist) : dataset_source(read_dataset(dataset_path));
  const auto init = Parameters::init(net, seeds.init);
  const std::size_t log_every = std::max<std::uint64_t>(1, ctx.cfg.get_count("train.log_every"));
  const std::size_t ck_every = ctx.cfg.get_count("train.checkpoint_every");
  const std::string ck_path = (ctx.dir() / "checkpoint.bin").string();

  auto log = open_output(ctx.dir() / "train_log.jsonl");
  auto save = [&](const Parameters& params, std::size_t step) {
    save_checkpoint(ck_path, Checkpoint{params, spec, vocab, dist.length(), step, schedule.records()});
  };
  auto on_record = [&](const TrainRecord& rec, const Parameters& params) {
    if (rec.step % log_every == 0 || !std::isfinite(rec.loss)) log << rec.to_json() << '\n';
    if (ck_every > 0 && (rec.step + 1) % ck_every == 0 && std::isfinite(rec.loss)) {
      save(params, rec.step + 1);
    }
  };
  const auto result = train(source, vocab, net, tcfg, schedule, spec, &init, on_record);
  log.flush();
  if (result.diverged) {
    ctx.err << "training aborted: " << result.message << '\n';
    return kExitNumeric;
  }
  save(result.params, result.steps_done);
  if (schedule.initialized()) open_output(ctx.dir() / "schedule.csv") << schedule.snapshot_csv();

  // Held-out evaluation against the matched-filter baseline.
  const std::size_t n_eval = std::max<std::uint64_t>(1, ctx.cfg.get_count("train.eval_batch"));
  Rng eval_rng(derive_seed(seeds.train, 99));
  std::vector<TokenSequence> tokens;
  for (std::size_t i = 0; i < n_eval; ++i) tokens.push_back(dist.sample(eval_rng));
  const auto x0 = encode_batch(tokens, vocab);
  std::vector<double> sigmas(n_eval);
  for (auto& s : sigmas) s = schedule.sample_lognormal(eval_rng);
  const auto noise =
      draw_batch_noise(n_eval, dist.bit_length(), net.sc_enabled ? net.p_sc : 0.0, eval_rng);
  const auto sc = self_condition_inputs(result.params, x0, sigmas, noise, spec);
  const double eval_loss = loss_value(result.params, x0, sigmas, noise.eps, sc, spec);
  double baseline = 0.0;
  for (double b : matched_filter_losses(x0, sigmas, noise.eps, spec)) baseline += b;
  baseline /= static_cast<double>(n_eval);

  auto metrics = open_output(ctx.dir() / "metrics.jsonl");
  const auto digest = ctx.cfg.digest();
  metrics << metric_json("eval_loss", eval_loss, n_eval, digest, seeds.global) << '\n';
  metrics << metric_json("eval_baseline_loss", baseline, n_eval, digest, seeds.global) << '\n';
  metrics << metric_json("eval_relative_improvement", 1.0 - eval_loss / baseline, n_eval, digest,
                         seeds.global)
          << '\n';
  ctx.out << "steps " << result.steps_done << " eval_loss " << format_double(eval_loss)
          << " baseline " << format_double(baseline) << '\n';
  return kExitOk;
}

int cmd_sample(Context& ctx) {
  write_run_header(ctx);
  const auto setup = make_setup(ctx, true);
  const auto seeds = ctx.cfg.seeds();
  const auto scfg = ctx.cfg.sampler(seeds.sample);
  const auto grid = make_grid(scfg, setup.spec, setup.schedule.get());
  const auto run = draw_samples(setup, scfg, grid, ctx.cfg.get_count("sampler.samples"),
                                ctx.cfg.get_count("sampler.batch"));
  write_dataset((ctx.dir() / "samples.txt").string(), run.samples.sequences);
  open_output(ctx.dir() / "trace.csv") << trace_csv(run.trace);
  const auto m = evaluate(run.samples, setup.dist);
  auto f = open_output(ctx.dir() / "metrics.jsonl");
  write_metrics(f, m, run.samples.size(), ctx.cfg.digest(), scfg.seed);
  f << metric_json("nfe", static_cast<double>(run.nfe), run.samples.size(), ctx.cfg.digest(),
                   scfg.seed)
    << '\n';
  ctx.out << "samples " << run.samples.size() << " source " << setup.source << '\n'
          << "unigram_tv " << format_double(m.unigram_tv) << '\n'
          << "oracle_nll " << format_double(m.nll.nll_per_token) << '\n'
          << "token_entropy " << format_double(m.token_entropy) << '\n';
  return kExitOk;
}

int cmd_sweep_churn(Context& ctx) {
  write_run_header(ctx);
  const auto setup = make_setup(ctx, true);
  const auto seeds = ctx.cfg.seeds();
  const auto values = ctx.cfg.get_list("sweep.s_churn_values");
  const std::size_t n_seeds = ctx.cfg.get_count("sweep.seeds");
  if (values.empty() || n_seeds == 0) throw ConfigError("sweep needs churn values and seeds");
  auto csv = open_output(ctx.dir() / "frontier.csv");
  auto metrics = open_output(ctx.dir() / "metrics.jsonl");
  csv << "s_churn,gamma,seed,oracle_nll,token_entropy,unigram_tv,invalid_rate\n";
  for (double v : values) {
    for (std::size_t k = 0; k < n_seeds; ++k) {
      auto scfg = ctx.cfg.sampler(derive_seed(seeds.sample, k));
      scfg.s_churn = v;
      scfg.validate();
      const auto grid = make_grid(scfg, setup.spec, setup.schedule.get());
      const auto run = draw_samples(setup, scfg, grid, ctx.cfg.get_count("sampler.samples"),
                                    ctx.cfg.get_count("sampler.batch"));
      const auto m = evaluate(run.samples, setup.dist);
      const double gamma = std::min(v / static_cast<double>(scfg.nfe), std::sqrt(2.0) - 1.0);
      csv << format_double(v) << ',' << format_double(gamma) << ',' << scfg.seed << ','
          << format_double(m.nll.nll_per_token) << ',' << format_double(m.token_entropy) << ','
          << format_double(m.unigram_tv) << ',' << format_double(m.invalid_rate) << '\n';
      write_metrics(metrics, m, run.samples.size(), ctx.cfg.digest(), scfg.seed);
      ctx.out << "s_churn " << format_double(v) << " seed " << k << " nll "
              << format_double(m.nll.nll_per_token) << " entropy "
              << format_double(m.token_entropy) << '\n';
    }
  }
  return kExitOk;
}

int cmd_grid(Context& ctx) {
  const std::string type = ctx.opt.type.empty() ? ctx.cfg.get("sampler.grid") : ctx.opt.type;
  const auto kind = parse_grid_kind(type);
  const auto spec = ctx.cfg.diffusion();
  const std::size_t nfe = ctx.cfg.get_count("sampler.nfe");
  if (nfe == 0) throw ConfigError("--nfe must be at least 1");
  std::vector<double> grid;
  if (kind == GridKind::karras) {
    grid = karras_grid(nfe, spec);
  } else {
    const auto setup = make_setup(ctx, false);
    grid = setup.schedule->entropy_grid(nfe);
  }
  for (double s : grid) ctx.out << format_double(s) << '\n';
  if (!ctx.opt.out_dir.empty()) {
    write_run_header(ctx);
    auto f = open_output(ctx.dir() / "grid.csv");
    f << "index,sigma\n";
    for (std::size_t i = 0; i < grid.size(); ++i) f << i << ',' << format_double(grid[i]) << '\n';
  }
  return kExitOk;
}

int cmd_oracle_check(Context& ctx) {
  write_run_header(ctx);
  const auto spec = ctx.cfg.diffusion();
  const auto dist = ctx.cfg.distribution();
  Rng rng(derive_seed(ctx.cfg.seeds().global, 31));
  auto report = open_output(ctx.dir() / "oracle_check.jsonl");
  bool all_ok = true;
  auto check = [&](const std::string& name, double value, double limit) {
    const bool ok = value < limit;
    all_ok = all_ok && ok;
    ctx.out << (ok ? "PASS " : "FAIL ") << name << " value=" << format_double(value)
            << " limit=" << format_double(limit) << '\n';
    nlohmann::ordered_json j;
    j["check"] = name;
    j["value"] = value;
    j["limit"] = limit;
    j["pass"] = ok;
    report << j.dump() << '\n';
  };

  double mf = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double sigma = 0.2 + 2.0 * rng.uniform();
    const double x = 0.5 + sigma * sigma * (rng.uniform() * 20.0 - 10.0);
    const double l1 = -0.5 * (x - 1.0) * (x - 1.0) / (sigma * sigma);
    const double l0 = -0.5 * x * x / (sigma * sigma);
    const double bayes = 1.0 / (1.0 + std::exp(l0 - l1));
    mf = std::max(mf, std::abs(sigmoid(matched_filter_logit(x, sigma, spec)) - bayes));
  }
  check("matched_filter_vs_bayes", mf, 1e-12);

  const auto small = ToyDistribution::iid_uniform(VocabSpec::for_vocab(4), 2);
  double tweedie = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double sigma = std::exp(std::log(0.01) + std::log(1000.0) * rng.uniform());
    const auto x0 = encode(small.sample(rng), small.vocab());
    std::vector<double> x(x0.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = x0.values[j] + sigma * rng.normal();
    const auto direct = exact_score(x, sigma, small);
    const auto via = score_from_denoiser(exact_denoiser(x, sigma, small), x, sigma);
    for (std::size_t j = 0; j < x.size(); ++j) tweedie = std::max(tweedie, std::abs(direct[j] - via[j]));
  }
  check("tweedie_consistency", tweedie, 1e-8);

  if (dist.enumerable()) {
    double route_gap = 0.0, weight_gap = 0.0, fd_gap = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double sigma = std::exp(std::log(0.05) + std::log(100.0) * rng.uniform());
      const auto x0 = encode(dist.sample(rng), dist.vocab());
      std::vector<double> x(x0.size());
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = x0.values[j] + sigma * rng.normal();
      if (dist.has_chain_structure()) {
        const auto a = exact_denoiser(x, sigma, dist, OracleRoute::enumerate);
        const auto b = exact_denoiser(x, sigma, dist, OracleRoute::chain);
        for (std::size_t j = 0; j < x.size(); ++j) route_gap = std::max(route_gap, std::abs(a[j] - b[j]));
      }
      const NoisyMarginal marginal(dist, sigma);
      double total = 0.0;
      for (double w : marginal.posterior_weights(x)) total += w;
      weight_gap = std::max(weight_gap, std::abs(total - 1.0));
      const auto score = exact_score(x, sigma, dist);
      const double h = 1e-5 * sigma;
      for (std::size_t j = 0; j < x.size(); ++j) {
        auto xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const double fd = (marginal.log_density(xp) - marginal.log_density(xm)) / (2.0 * h);
        fd_gap = std::max(fd_gap, std::abs(fd - score[j]) / std::max(1.0, std::abs(score[j])));
      }
    }
    if (dist.has_chain_structure()) check("chain_vs_enumeration", route_gap, 1e-10);
    check("posterior_normalization", weight_gap, 1e-12);
    check("score_vs_finite_difference", fd_gap, 1e-5);
    double support_h = 0.0;
    for (const auto& e : dist.support()) support_h -= e.probability * std::log(e.probability);
    check("entropy_consistency", std::abs(support_h - dist.entropy()), 1e-10);
  } else {
    ctx.out << "SKIP enumeration checks: generator support exceeds " << kMaxEnumeration << '\n';
  }
  return all_ok ? kExitOk : kExitNumeric;
}

int cmd_gradcheck(Context& ctx) {
  const auto dist = ctx.cfg.distribution();
  const auto spec = ctx.cfg.diffusion();
  const auto net = ctx.cfg.net(dist.vocab());
  const auto seeds = ctx.cfg.seeds();
  Rng rng(derive_seed(seeds.global, 41));
  auto params = Parameters::init(net, seeds.init);
  randomize_parameters(params, rng, 0.5);
  std::vector<TokenSequence> tokens = {dist.sample(rng), dist.sample(rng)};
  const auto x0 = encode_batch(tokens, dist.vocab());
  const std::vector<double> sigmas = {0.4, 1.3};
  std::vector<double> eps(x0.size()), sc(x0.size());
  for (auto& e : eps) e = rng.normal();
  for (auto& s : sc) s = rng.uniform();
  const auto report = gradcheck(params, x0, sigmas, eps, sc, spec, 240, rng);
  std::map<std::string, double> worst;
  for (const auto& e : report.entries) {
    auto& w = worst[group_name(e.group)];
    w = std::max(w, e.rel_error);
  }
  for (const auto& [g, w] : worst) ctx.out << g << " max_rel_error " << format_double(w) << '\n';
  const bool ok = report.max_rel_error < 1e-4;
  ctx.out << (ok ? "PASS" : "FAIL") << " gradcheck coords=" << report.entries.size()
          << " max_rel_error=" << format_double(report.max_rel_error) << '\n';
  write_run_header(ctx);
  auto f = open_output(ctx.dir() / "gradcheck.csv");
  f << "index,view,group,analytic,numeric,rel_error\n";
  for (const auto& e : report.entries) {
    f << e.index << ',' << e.view << ',' << group_name(e.group) << ',' << format_double(e.analytic)
      << ',' << format_double(e.numeric) << ',' << format_double(e.rel_error) << '\n';
  }
  return ok ? kExitOk : kExitNumeric;
}

int cmd_profile_boundary(Context& ctx) {
  const auto cases = reference_logit_cases();
  ctx.out << logit_table_markdown(cases);
  const bool write = !ctx.opt.out_dir.empty();
  if (write) {
    write_run_header(ctx);
    open_output(ctx.dir() / "logit_table.csv") << logit_table_csv(cases);
  }
  if (!ctx.opt.bench) return kExitOk;
  BoundaryCase c;
  c.label = "bench";
  c.batch = ctx.cfg.get_count("profile.batch");
  c.tokens = ctx.cfg.get_count("profile.tokens");
  c.vocab = ctx.cfg.get_count("profile.vocab");
  c.width = ctx.cfg.get_count("profile.width");
  c.bytes_per_element = ctx.cfg.get_count("profile.bytes_per_element");
  const std::size_t reps = ctx.cfg.get_count("profile.reps");
  std::vector<std::pair<BoundaryCase, BenchResult>> rows;
  rows.emplace_back(c, micro_bench(c, BoundaryKind::token, reps, ctx.cfg.seeds().global));
  rows.emplace_back(c, micro_bench(c, BoundaryKind::bitstream, reps, ctx.cfg.seeds().global));
  ctx.out << '\n' << bench_table_markdown(rows);
  const bool ok = rows[0].second.ok && rows[1].second.ok;
  if (ok) {
    ctx.out << "token/bitstream time ratio "
            << format_double(rows[0].second.mean_ms / rows[1].second.mean_ms) << '\n';
  }
  if (write) open_output(ctx.dir() / "boundary_bench.md") << bench_table_markdown(rows);
  return ok ? kExitOk : kExitCapacity;
}

int cmd_analyze_schedule(Context& ctx) {
  write_run_header(ctx);
  const auto setup = make_setup(ctx, false);
  const auto& schedule = *setup.schedule;
  open_output(ctx.dir() / "schedule.csv") << schedule.snapshot_csv();
  const auto scfg = ctx.cfg.sampler(ctx.cfg.seeds().sample);
  const double s_churn = scfg.s_churn > 0.0 ? scfg.s_churn : 1.0;
  const auto grid = schedule.entropy_grid(scfg.nfe);
  auto f = open_output(ctx.dir() / "lambda.csv");
  f << "step,sigma,sigma_next,lambda,s_churn_pi,ratio\n";
  double worst = 0.0;
  const std::size_t lo = scfg.nfe / 20, hi = scfg.nfe - scfg.nfe / 20;
  for (std::size_t i = 0; i < scfg.nfe; ++i) {
    const double gamma = std::min(s_churn / static_cast<double>(scfg.nfe), std::sqrt(2.0) - 1.0);
    const double lambda = effective_lambda(gamma, grid[i], grid[i + 1]);
    const double target = s_churn * schedule.density(std::log(grid[i]));
    f << i << ',' << format_double(grid[i]) << ',' << format_double(grid[i + 1]) << ','
      << format_double(lambda) << ',' << format_double(target) << ','
      << format_double(lambda / target) << '\n';
    if (i >= lo && i <= hi) worst = std::max(worst, std::abs(lambda / target - 1.0));
  }
  ctx.out << "bins " << schedule.config().bins << " records " << schedule.size() << '\n'
          << "s_churn " << format_double(s_churn) << " interior max |lambda/(S_churn pi) - 1| "
          << format_double(worst) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bitstream diffusion experiments"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config_path, "Experiment config file");
  app.add_option("--set", opt.overrides, "Override a config key (section.key=value)");
  app.add_option("--seed", opt.seed, "Global seed");
  app.add_option("--out", opt.out_dir, "Output directory");
  app.add_flag("--oracle", opt.oracle, "Use the exact denoiser of the configured generator");
  app.add_option("--nfe", opt.nfe, "Number of sampling intervals");
  app.add_option("--s-churn", opt.s_churn, "Churn budget S_churn");
  app.add_option("--eta", opt.eta, "Asymmetric time-interval lag");
  app.add_option("--window", opt.window, "Entropy-CDF churn window LO,HI");
  app.add_option("--grid", opt.grid, "Sampling grid: karras or entropy");
  app.add_flag("--deterministic", opt.deterministic, "Disable churn");
  app.add_option("--type", opt.type, "Grid type for the grid command");
  app.add_option("--checkpoint", opt.checkpoint, "Checkpoint file");
  app.add_flag("--bench", opt.bench, "Also run the boundary micro-benchmark");

  using Handler = int (*)(Context&);
  const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
      {"gen-data", "Serialize the toy generator and sample a dataset", cmd_gen_data},
      {"train", "Train the residual network", cmd_train},
      {"sample", "Generate and score samples", cmd_sample},
      {"sweep-churn", "Churn sweep: NLL and entropy frontier", cmd_sweep_churn},
      {"grid", "Print a sigma grid", cmd_grid},
      {"oracle-check", "Run the exact-oracle invariant suite", cmd_oracle_check},
      {"gradcheck", "Finite-difference gradient report", cmd_gradcheck},
      {"profile-boundary", "Vocabulary-boundary tables", cmd_profile_boundary},
      {"analyze-schedule", "Schedule snapshot and lambda comparison", cmd_analyze_schedule},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help)->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    Context ctx{build_config(opt), opt, out, err};
    for (const auto& [name, help, fn] : commands) {
      if (app.got_subcommand(name)) return fn(ctx);
    }
    return kExitUsage;
  } catch (const MissingFileError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const CapacityError& e) {
    err << "capacity error: " << e.what() << '\n';
    return kExitCapacity;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingFile;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace bitdiff
