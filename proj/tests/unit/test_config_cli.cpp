// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bitdiff/cli.hpp"
#include "bitdiff/errors.hpp"
#include "bitdiff/experiment_config.hpp"

using namespace bitdiff;
namespace fs = std::filesystem;

namespace {
struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bitdiff_unit_" + name);
  fs::remove_all(p);
  return p;
}
}  // namespace

TEST_CASE("config parsing and canonical form") {
  const auto cfg = ExperimentConfig::from_text(
      "# comment\n[data]\nvocab = 16\n\n[sampler]\nnfe=32\n");
  CHECK(cfg.get_count("data.vocab") == 16);
  CHECK(cfg.get_count("sampler.nfe") == 32);
  CHECK(cfg.distribution().vocab().vocab_size == 16);
  const auto again = ExperimentConfig::from_text(cfg.canonical());
  CHECK(again.canonical() == cfg.canonical());
  CHECK(again.digest() == cfg.digest());
  CHECK(cfg.digest() != ExperimentConfig().digest());
  auto moved = cfg;
  moved.set("output.dir", "elsewhere");
  CHECK(moved.digest() == cfg.digest());
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);

  CHECK_THROWS_AS(ExperimentConfig::from_text("[data]\ncolour = red\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_text("vocab = 3\n"), ConfigError);
  ExperimentConfig c;
  CHECK_THROWS_AS(c.apply_override("data.vocab"), ConfigError);
  c.apply_override("data.vocab=1");
  CHECK_THROWS(c.distribution());
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/x.cfg"), MissingFileError);
}

TEST_CASE("seeds fan out and can be pinned") {
  ExperimentConfig c;
  c.set("seed.global", "5");
  const auto a = c.seeds();
  CHECK(a.data != a.init);
  CHECK(a.train != a.sample);
  c.set("seed.init", "123");
  CHECK(c.seeds().init == 123);
  CHECK(c.seeds().data == a.data);
}

TEST_CASE("dataset files roundtrip") {
  const auto dir = scratch("data");
  fs::create_directories(dir);
  const std::vector<TokenSequence> data{{1, 2, 3}, {4, 5, 6}};
  write_dataset((dir / "d.txt").string(), data);
  CHECK(read_dataset((dir / "d.txt").string()) == data);
  fs::remove_all(dir);
}

TEST_CASE("cli: grid endpoints and exit codes") {
  const auto r = cli({"grid", "--type", "karras", "--nfe", "1"});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "80\n0.002\n");
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"grid", "--set", "data.colour=red"}).code == kExitConfig);
  CHECK(cli({"grid", "--config", "/nonexistent.cfg"}).code == kExitMissingFile);
  const auto out = scratch("nock");
  CHECK(cli({"sample", "--out", out.string()}).code == kExitMissingFile);
  CHECK(cli({"sample", "--oracle", "--set", "data.vocab=65536", "--set", "data.length=3",
             "--set", "data.generator=explicit", "--set", "data.support=1,2,3:1", "--out",
             out.string()})
            .code != kExitOk);
  fs::remove_all(out);
}

TEST_CASE("cli: profile-boundary prints the LM1B row") {
  const auto r = cli({"profile-boundary"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("2035") != std::string::npos);
}

TEST_CASE("cli: oracle sampling writes replayable artifacts") {
  const auto a = scratch("sample_a"), b = scratch("sample_b");
  const std::vector<std::string> common{"sample", "--oracle", "--deterministic", "--nfe", "32",
                                        "--set", "sampler.samples=300", "--set", "sampler.batch=100"};
  auto args = common;
  args.insert(args.end(), {"--out", a.string()});
  CHECK(cli(args).code == kExitOk);
  args = common;
  args.insert(args.end(), {"--out", b.string()});
  CHECK(cli(args).code == kExitOk);
  for (const char* f : {"metrics.jsonl", "samples.txt", "trace.csv"}) {
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(fs::exists(a / "config.txt"));
  CHECK(fs::exists(a / "config.digest"));
  const auto replay = ExperimentConfig::load((a / "config.txt").string());
  CHECK(replay.digest() + "\n" == slurp(a / "config.digest"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cli: gen-data, train, sample from checkpoint") {
  const auto dir = scratch("pipeline");
  const std::vector<std::string> small{
      "--out", dir.string(), "--set", "net.blocks=1", "--set", "net.width=16", "--set",
      "net.heads=2", "--set", "net.ff_width=32", "--set", "net.head_width=8", "--set",
      "train.steps=6", "--set", "train.warmup_steps=2", "--set", "train.batch_size=8", "--set",
      "train.checkpoint_every=3", "--set", "train.eval_batch=64", "--set",
      "schedule.warmup_steps=2", "--set", "schedule.transition_steps=2", "--set",
      "sampler.samples=20", "--set", "sampler.batch=10", "--nfe", "8", "--set",
      "data.dataset_size=50", "--set", "sweep.s_churn_values=0 4", "--set", "sweep.seeds=1"};
  auto with = [&](std::string cmd) {
    std::vector<std::string> args{std::move(cmd)};
    args.insert(args.end(), small.begin(), small.end());
    return cli(args);
  };
  CHECK(with("gen-data").code == kExitOk);
  CHECK(read_dataset((dir / "dataset.txt").string()).size() == 50);
  const auto t = with("train");
  CHECK(t.code == kExitOk);
  CHECK(fs::exists(dir / "checkpoint.bin"));
  CHECK(fs::exists(dir / "train_log.jsonl"));
  CHECK(slurp(dir / "metrics.jsonl").find("eval_baseline_loss") != std::string::npos);
  CHECK(with("sample").code == kExitOk);
  CHECK(slurp(dir / "metrics.jsonl").find("oracle_nll") != std::string::npos);
  CHECK(with("sweep-churn").code == kExitOk);
  const auto frontier = slurp(dir / "frontier.csv");
  CHECK(std::count(frontier.begin(), frontier.end(), '\n') == 3);
  fs::remove_all(dir);
}

TEST_CASE("cli: analysis commands") {
  const auto dir = scratch("analysis");
  CHECK(cli({"oracle-check", "--out", dir.string()}).code == kExitOk);
  CHECK(cli({"gradcheck", "--out", dir.string(), "--set", "net.width=16", "--set", "net.heads=2",
             "--set", "net.ff_width=32", "--set", "net.head_width=8"})
            .code == kExitOk);
  const auto a = cli({"analyze-schedule", "--out", dir.string(), "--s-churn", "12.8", "--nfe", "64"});
  CHECK(a.code == kExitOk);
  CHECK(fs::exists(dir / "lambda.csv"));
  CHECK(fs::exists(dir / "schedule.csv"));
  const auto g = cli({"grid", "--type", "entropy", "--nfe", "4"});
  CHECK(g.code == kExitOk);
  CHECK(std::count(g.out.begin(), g.out.end(), '\n') == 5);
  fs::remove_all(dir);
}
