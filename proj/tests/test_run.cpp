#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

#include "emofeed/common.hpp"
#include "emofeed/run.hpp"

using namespace emofeed;
using nlohmann::json;
using testsupport::sample_data;
using testsupport::slurp;
using testsupport::spit;
using testsupport::test_data;

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(Command command, const RunConfig& cfg, bool force = false) {
  std::ostringstream out, err;
  const int code = execute(command, cfg, force, out, err);
  return {code, out.str(), err.str()};
}

/// Runs the installed binary through the shell; stdout and stderr go to files.
Outcome cli(const std::string& args, const testsupport::TempDir& scratch) {
  const std::string out = scratch.file("cli.out");
  const std::string err = scratch.file("cli.err");
  const std::string line = std::string(EMOFEED_CLI) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(line.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

json report_of(const fs::path& dir) { return json::parse(slurp(dir / "report.json")); }

RunConfig dataset_config(const fs::path& dir) {
  RunConfig cfg;
  cfg.run_dir = dir.string();
  cfg.lexicon = sample_data("lexicon_sample.csv");
  cfg.mapping = sample_data("category_mapping.txt");
  cfg.captions = sample_data("captions_sample.jsonl");
  return cfg;
}

RunConfig short_train_config(const fs::path& dir, int steps) {
  RunConfig cfg;
  cfg.run_dir = dir.string();
  cfg.seed = 3;
  cfg.grpo.steps = steps;
  cfg.trainer.eval_interval = 0;
  cfg.checkpoint_interval = 10;
  return cfg;
}

}  // namespace

TEST_CASE("config resolution: defaults, then file, then flags") {
  testsupport::TempDir dir("config");
  spit(dir.path() / "run.cfg", "# comment\nseed = 5\nsteps = 40\nclip_epsilon = 0.3\n\n");
  RunConfig cfg;
  cfg.apply_file(dir.file("run.cfg"));
  CHECK(cfg.seed == 5);
  CHECK(cfg.grpo.steps == 40);
  CHECK(cfg.grpo.clip_epsilon == 0.3);
  cfg.set("steps", "12");
  CHECK(cfg.grpo.steps == 12);
  CHECK(cfg.grpo.group_size == 8);

  RunConfig reread;
  spit(dir.path() / "snap.cfg", cfg.snapshot());
  reread.apply_file(dir.file("snap.cfg"));
  CHECK(reread.snapshot() == cfg.snapshot());

  CHECK_THROWS_AS(cfg.set("no_such_key", "1"), ValidationError);
  CHECK_THROWS_AS(cfg.set("steps", "many"), ValidationError);
  RunConfig bad;
  bad.run_dir = dir.file("x");
  bad.grpo.group_size = 1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  // the binary applies the same order
  spit(dir.path() / "cli.cfg", "seed = 5\ntau = 0.4\n");
  const Outcome o = cli("reward-check --config " + dir.file("cli.cfg") + " --tau 0.6 --corpus " +
                            test_data("reward_corpus.txt") + " --truth " + test_data("reward_truth.txt") +
                            " --run-dir " + dir.file("rc"),
                        dir);
  REQUIRE(o.code == 0);
  const std::string resolved = slurp(dir.path() / "rc" / "config.resolved");
  CHECK(resolved.find("seed = 5") != std::string::npos);
  CHECK(resolved.find("tau = 0.6") != std::string::npos);
}

TEST_CASE("run directory ownership") {
  testsupport::TempDir dir("rundir");
  const RunConfig cfg = dataset_config(dir.path() / "ds");
  REQUIRE(run(Command::kBuildDataset, cfg).code == 0);
  const Outcome again = run(Command::kBuildDataset, cfg);
  CHECK(again.code == 1);
  CHECK(again.err.find("--force") != std::string::npos);

  spit(dir.path() / "ds" / "stale.txt", "old");
  CHECK(run(Command::kBuildDataset, cfg, true).code == 0);
  CHECK_FALSE(fs::exists(dir.path() / "ds" / "stale.txt"));

  // held lock blocks a second owner
  {
    RunDirectory owner(dir.path() / "locked", false);
    CHECK_THROWS(RunDirectory(dir.path() / "locked", true));
  }
  CHECK_NOTHROW(RunDirectory(dir.path() / "locked", true));
}

TEST_CASE("build-dataset writes reproducible, valid files") {
  testsupport::TempDir dir("build");
  REQUIRE(run(Command::kBuildDataset, dataset_config(dir.path() / "a")).code == 0);
  REQUIRE(run(Command::kBuildDataset, dataset_config(dir.path() / "b")).code == 0);
  CHECK(slurp(dir.path() / "a" / "dataset.jsonl") == slurp(dir.path() / "b" / "dataset.jsonl"));
  CHECK(slurp(dir.path() / "a" / "category_stats.csv") == slurp(dir.path() / "b" / "category_stats.csv"));

  const json report = report_of(dir.path() / "a");
  CHECK(report["exit_code"] == 0);
  for (const auto& name : report["artifacts"]) CHECK(fs::exists(dir.path() / "a" / name.get<std::string>()));
  CHECK(slurp(dir.path() / "a" / "validation.txt").find("violations: 0") != std::string::npos);

  std::string first_line = slurp(sample_data("captions_sample.jsonl"));
  first_line = first_line.substr(0, first_line.find('\n') + 1);
  spit(dir.path() / "dup.jsonl", slurp(sample_data("captions_sample.jsonl")) + first_line);
  RunConfig dup = dataset_config(dir.path() / "dup");
  dup.captions = dir.file("dup.jsonl");
  const Outcome o = run(Command::kBuildDataset, dup);
  CHECK(o.code == 1);
  CHECK(o.err.find("img-0001") != std::string::npos);
  CHECK(report_of(dir.path() / "dup")["exit_code"] == 1);
}

TEST_CASE("train with zero steps reports the untrained baseline") {
  testsupport::TempDir dir("zero");
  const Outcome o = run(Command::kTrain, short_train_config(dir.path() / "t", 0));
  REQUIRE(o.code == 0);
  const json m = report_of(dir.path() / "t")["metrics"];
  CHECK(m["steps"] == 0);
  CHECK(m["v_error"] == m["baseline_v_error"]);
  CHECK(m["a_error"] == m["baseline_a_error"]);
}

TEST_CASE("train, eval and feedback chain through checkpoints") {
  testsupport::TempDir dir("chain");
  const fs::path train_dir = dir.path() / "train";
  REQUIRE(run(Command::kTrain, short_train_config(train_dir, 30)).code == 0);
  const json report = report_of(train_dir);
  for (const auto& name : report["artifacts"]) CHECK(fs::exists(train_dir / name.get<std::string>()));
  CHECK(fs::exists(train_dir / "checkpoints" / "step_000000.txt"));
  CHECK(fs::exists(train_dir / "checkpoints" / "step_000030.txt"));

  RunConfig eval;
  eval.run_dir = (dir.path() / "eval").string();
  eval.checkpoint = (train_dir / "model.txt").string();
  const Outcome e = run(Command::kEval, eval);
  REQUIRE(e.code == 0);
  const json metrics = json::parse(slurp(dir.path() / "eval" / "metrics.json"));
  char line[64];
  std::snprintf(line, sizeof line, "V-Error: %.4f", metrics["v_error"].get<double>());
  CHECK(e.out.find(line) != std::string::npos);
  std::snprintf(line, sizeof line, "A-Error: %.4f", metrics["a_error"].get<double>());
  CHECK(e.out.find(line) != std::string::npos);

  // resuming from a checkpoint is accepted
  RunConfig resume = short_train_config(dir.path() / "resume", 5);
  resume.checkpoint = (train_dir / "checkpoints" / "step_000030.txt").string();
  CHECK(run(Command::kTrain, resume).code == 0);

  RunConfig fb;
  fb.run_dir = (dir.path() / "fb").string();
  fb.checkpoint = eval.checkpoint;
  fb.feedback.max_iterations = 3;
  fb.feedback.stop_on_zero_loss = false;
  REQUIRE(run(Command::kFeedback, fb).code == 0);
  const json fm = report_of(dir.path() / "fb")["metrics"];
  CHECK(fm["generation_rounds"] == 4);
  CHECK(fm["iterations"] == 3);

  RunConfig replay = fb;
  replay.run_dir = (dir.path() / "replay").string();
  replay.replay_log = (dir.path() / "fb" / "exchanges.jsonl").string();
  REQUIRE(run(Command::kFeedback, replay).code == 0);
  CHECK(slurp(dir.path() / "replay" / "state.json") == slurp(dir.path() / "fb" / "state.json"));

  RunConfig identity = fb;
  identity.run_dir = (dir.path() / "identity").string();
  identity.refiner = "identity";
  identity.feedback.max_iterations = 1;
  REQUIRE(run(Command::kFeedback, identity).code == 0);
  CHECK(report_of(dir.path() / "identity")["metrics"]["final_prompt"] == identity.prompt);
}

TEST_CASE("eval of a dataset's test split") {
  testsupport::TempDir dir("evalds");
  REQUIRE(run(Command::kBuildDataset, dataset_config(dir.path() / "ds")).code == 0);
  REQUIRE(run(Command::kTrain, short_train_config(dir.path() / "t", 0)).code == 0);
  RunConfig eval;
  eval.run_dir = (dir.path() / "eval").string();
  eval.checkpoint = (dir.path() / "t" / "model.txt").string();
  eval.dataset = (dir.path() / "ds" / "dataset.jsonl").string();
  REQUIRE(run(Command::kEval, eval).code == 0);
  const json m = json::parse(slurp(dir.path() / "eval" / "metrics.json"));
  CHECK(m["source"] == "dataset");
  CHECK(m["conditions"] == 4);
}

TEST_CASE("reward-check reproduces the golden table") {
  testsupport::TempDir dir("rewardcheck");
  RunConfig cfg;
  cfg.run_dir = dir.file("rc");
  cfg.corpus = test_data("reward_corpus.txt");
  cfg.truth = test_data("reward_truth.txt");
  REQUIRE(run(Command::kRewardCheck, cfg).code == 0);
  CHECK(slurp(dir.path() / "rc" / "rewards.csv") == slurp(test_data("reward_golden.csv")));

  cfg.run_dir = dir.file("tight");
  cfg.weights.tau = 0.5;
  REQUIRE(run(Command::kRewardCheck, cfg).code == 0);
  const json m = report_of(dir.path() / "tight")["metrics"];
  CHECK(m["task_hits"].get<int>() < 13);
  CHECK(m["tau"] == 0.5);

  cfg.run_dir = dir.file("missing");
  cfg.truth.clear();
  CHECK(run(Command::kRewardCheck, cfg).code == 1);
}

TEST_CASE("exit codes for numeric and remote failures") {
  testsupport::TempDir dir("codes");
  RunConfig blowup = short_train_config(dir.path() / "nan", 20);
  blowup.grpo.learning_rate = 1e300;
  const Outcome n = run(Command::kTrain, blowup);
  CHECK(n.code == 2);
  const json report = report_of(dir.path() / "nan");
  CHECK(report["exit_code"] == 2);
  REQUIRE(report["metrics"].contains("last_good_checkpoint"));
  CHECK(fs::exists(dir.path() / "nan" / report["metrics"]["last_good_checkpoint"].get<std::string>()));

  REQUIRE(run(Command::kTrain, short_train_config(dir.path() / "t", 0)).code == 0);
  ::setenv("EMOFEED_LVLM_URL", "http://127.0.0.1:9", 1);
  ::setenv("EMOFEED_LVLM_MODEL", "test", 1);
  RunConfig remote;
  remote.run_dir = dir.file("remote");
  remote.checkpoint = (dir.path() / "t" / "model.txt").string();
  remote.backend = "remote";
  remote.feedback.max_iterations = 1;
  CHECK(run(Command::kFeedback, remote).code == 3);
  CHECK(report_of(dir.path() / "remote")["exit_code"] == 3);
  ::unsetenv("EMOFEED_LVLM_URL");
  ::unsetenv("EMOFEED_LVLM_MODEL");

  const Outcome usage = cli("train --steps lots --run-dir " + dir.file("usage"), dir);
  CHECK(usage.code == 1);
}
