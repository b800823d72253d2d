#include "emofeed/run.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "emofeed/dataset.hpp"
#include "emofeed/feedback.hpp"
#include "emofeed/plot.hpp"
#include "emofeed/toy_task.hpp"

namespace emofeed {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kLockName = ".lock";

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string compact_timestamp(const std::string& iso) {
  std::string out;
  for (char c : iso) {
    if (c != '-' && c != ':') out += c;
  }
  return out;
}

/// Mirrors progress lines to the terminal and run.log.
class RunLog {
 public:
  RunLog(std::ostream& out, const fs::path& path) : out_(out), file_(path) {
    if (!file_) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  }
  void line(const std::string& text) {
    out_ << text << '\n';
    file_ << text << '\n';
    file_.flush();
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
};

void require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ValidationError(fmt::format("--{} is required", [&] {
    std::string flag = key;
    for (char& c : flag) if (c == '_') c = '-';
    return flag;
  }()));
}

ojson score_json(const VAScore& s) { return {{"valence", s.valence()}, {"arousal", s.arousal()}}; }

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

MlpPolicy load_policy(const RunConfig& cfg, int timesteps) {
  require_path(cfg.checkpoint, "checkpoint");
  MlpPolicy policy = load_weights(cfg.checkpoint, cfg.latent_dim);
  return policy.timesteps() == timesteps ? policy : policy.with_timesteps(timesteps);
}

std::string predictions_csv(const HeldoutEvaluation& eval) {
  std::string out = "target_valence,target_arousal,valence,arousal\n";
  for (std::size_t i = 0; i < eval.targets.size(); ++i) {
    out += fmt::format("{:.4f},{:.4f},{:.6f},{:.6f}\n", eval.targets[i].valence(),
                       eval.targets[i].arousal(), eval.predictions[i].valence(),
                       eval.predictions[i].arousal());
  }
  return out;
}

double mean_over(const std::vector<TrainLogEntry>& log, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += log[i].mean_reward;
  return end > begin ? sum / static_cast<double>(end - begin) : 0.0;
}

// ---------------------------------------------------------------------------

void run_build_dataset(const RunConfig& cfg, const RunDirectory& dir, RunLog& log,
                       RunReport& report) {
  require_path(cfg.lexicon, "lexicon");
  require_path(cfg.mapping, "mapping");
  require_path(cfg.captions, "captions");
  const LexiconColumns columns =
      cfg.lexicon_columns == "norms" ? LexiconColumns::norms_file() : LexiconColumns{};
  std::vector<std::string> warnings;
  const auto lexicon = load_lexicon(cfg.lexicon, columns, &warnings);
  for (const auto& w : warnings) log.line("warning: " + w);
  const auto mapping = load_category_mapping(cfg.mapping);
  const CategoryTable table = derive_category_stats(lexicon, mapping);

  std::string stats_csv = "emotion_class,mu_v,sigma_v,mu_a,sigma_a\n";
  for (const auto& s : table) {
    stats_csv += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", to_string(s.emotion), s.mu_v,
                             s.sigma_v, s.mu_a, s.sigma_a);
  }
  dir.write("category_stats.csv", stats_csv);

  const auto captions = load_captions(cfg.captions);
  const auto records = build_dataset(captions, table, cfg.seed, SplitRule{cfg.test_fraction});
  write_dataset(records, dir.path("dataset.jsonl").string());
  const ValidationReport check = validate_dataset(dir.path("dataset.jsonl").string());
  dir.write("validation.txt", check.render());
  log.line(check.render());

  report.artifacts = {"category_stats.csv", "dataset.jsonl", "validation.txt"};
  report.metrics = {{"records", check.records},
                    {"train", check.train},
                    {"test", check.test},
                    {"violations", check.violations.size()},
                    {"lexicon_words", lexicon.size()}};
  if (!check.ok()) {
    throw ValidationError(
        fmt::format("dataset has {} invariant violations", check.violations.size()));
  }
}

void run_train(const RunConfig& cfg, const RunDirectory& dir, RunLog& log, RunReport& report) {
  const EmotionField field = cfg.field();
  MlpPolicy policy =
      cfg.checkpoint.empty()
          ? MlpPolicy::initialize(cfg.latent_dim, cfg.hidden_dim, cfg.grpo.timesteps, cfg.seed)
          : load_policy(cfg, cfg.grpo.timesteps);

  const std::uint64_t eval_seed = mix_seed(cfg.seed, 0x5eedULL);
  TrainingTask<MlpPolicy> task =
      make_toy_training_task(field, cfg.task, cfg.weights, eval_seed, cfg.grpo.eval_timesteps);
  const auto grid = heldout_conditions(field, cfg.task);
  auto evaluate_full = [&](const MlpPolicy& p) {
    return evaluate_generator(policy_generator(p.with_timesteps(cfg.grpo.eval_timesteps)), grid,
                              field, cfg.task.eval_group_size, eval_seed);
  };

  const HeldoutEvaluation baseline = evaluate_full(policy);
  log.line(fmt::format("baseline V-Error {:.4f} A-Error {:.4f}", baseline.errors.v_error,
                       baseline.errors.a_error));

  fs::create_directories(dir.path("checkpoints"));
  std::string last_checkpoint = "checkpoints/step_000000.txt";
  save_weights(policy, dir.path(last_checkpoint).string());
  report.artifacts.push_back(last_checkpoint);

  std::ofstream csv(dir.path("train_log.csv"));
  csv << kTrainLogHeader << '\n';
  report.artifacts.push_back("train_log.csv");

  task.on_step = [&](const TrainLogEntry& entry, const MlpPolicy& current) {
    csv << format_log_line(entry) << '\n';
    csv.flush();
    if (!current.params().all_finite()) {
      throw NumericError(fmt::format("non-finite parameters after step {}", entry.step));
    }
    const int done = entry.step + 1;
    if (done % cfg.checkpoint_interval == 0) {
      last_checkpoint = fmt::format("checkpoints/step_{:06d}.txt", done);
      save_weights(current, dir.path(last_checkpoint).string());
      report.artifacts.push_back(last_checkpoint);
    }
    if (entry.v_error) {
      log.line(fmt::format("step {} reward {:.4f} kl {:.5f} clip {:.4f} V-Error {:.4f} A-Error {:.4f}",
                           entry.step, entry.mean_reward, entry.mean_kl, entry.clip_fraction,
                           *entry.v_error, *entry.a_error));
    }
  };

  report.metrics["baseline_v_error"] = baseline.errors.v_error;
  report.metrics["baseline_a_error"] = baseline.errors.a_error;
  try {
    TrainResult<MlpPolicy> result = train_loop(policy, task, cfg.grpo, cfg.trainer, cfg.seed);
    save_weights(result.policy, dir.path("model.txt").string());
    report.artifacts.push_back("model.txt");

    const HeldoutEvaluation final_eval = evaluate_full(result.policy);
    dir.write("predictions.csv", predictions_csv(final_eval));
    report.artifacts.push_back("predictions.csv");
    log.line(fmt::format("final V-Error {:.4f} A-Error {:.4f}", final_eval.errors.v_error,
                         final_eval.errors.a_error));

    const std::size_t n = result.log.size();
    const std::size_t decile = std::max<std::size_t>(1, n / 10);
    report.metrics["steps"] = n;
    report.metrics["v_error"] = final_eval.errors.v_error;
    report.metrics["a_error"] = final_eval.errors.a_error;
    if (n > 0) {
      report.metrics["first_decile_reward"] = mean_over(result.log, 0, std::min(decile, n));
      report.metrics["last_decile_reward"] = mean_over(result.log, n - std::min(decile, n), n);
      report.metrics["final_mean_kl"] = result.log.back().mean_kl;
    }
    report.metrics["parameter_hash"] = fmt::format("{:016x}", parameter_hash(result.policy));

    if (cfg.plot) {
      Series reward{"mean reward", {}, {}}, kl{"mean KL", {}, {}}, verr{"V-Error", {}, {}},
          aerr{"A-Error", {}, {}};
      for (const auto& e : result.log) {
        reward.x.push_back(e.step);
        reward.y.push_back(e.mean_reward);
        kl.x.push_back(e.step);
        kl.y.push_back(e.mean_kl);
        if (e.v_error) {
          verr.x.push_back(e.step);
          verr.y.push_back(*e.v_error);
          aerr.x.push_back(e.step);
          aerr.y.push_back(*e.a_error);
        }
      }
      dir.write("training_curves.svg", line_chart_svg("training", {reward, kl, verr, aerr}));
      dir.write("va_scatter.svg",
                va_scatter_svg("held-out targets vs generated", final_eval.targets,
                               final_eval.predictions));
      report.artifacts.push_back("training_curves.svg");
      report.artifacts.push_back("va_scatter.svg");
    }
  } catch (const NumericError&) {
    report.metrics["last_good_checkpoint"] = last_checkpoint;
    log.line("numeric failure; last good checkpoint: " + last_checkpoint);
    throw;
  }
}

std::vector<ConditionEmbedding> dataset_conditions(const RunConfig& cfg, const EmotionField& field) {
  std::ifstream in(cfg.dataset);
  if (!in) throw ValidationError(fmt::format("cannot read dataset '{}'", cfg.dataset));
  std::vector<ConditionEmbedding> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.at("split").get<std::string>() != "test") continue;
      out.push_back(condition_for(field,
                                  VAScore(j.at("valence").get<double>(), j.at("arousal").get<double>()),
                                  j.at("id").get<std::string>(), cfg.task.anchor_jitter));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("dataset line {}: {}", row, e.what()));
    }
  }
  if (out.empty()) throw ValidationError(fmt::format("dataset '{}' has no test records", cfg.dataset));
  return out;
}

void run_eval(const RunConfig& cfg, const RunDirectory& dir, RunLog& log, RunReport& report) {
  const EmotionField field = cfg.field();
  const MlpPolicy policy = load_policy(cfg, cfg.grpo.eval_timesteps);
  const auto conditions =
      cfg.dataset.empty() ? heldout_conditions(field, cfg.task) : dataset_conditions(cfg, field);
  const HeldoutEvaluation eval =
      evaluate_generator(policy_generator(policy), conditions, field, cfg.task.eval_group_size,
                         mix_seed(cfg.seed, 0x5eedULL));
  log.line(fmt::format("V-Error: {:.4f}", eval.errors.v_error));
  log.line(fmt::format("A-Error: {:.4f}", eval.errors.a_error));
  report.metrics = {{"v_error", eval.errors.v_error},
                    {"a_error", eval.errors.a_error},
                    {"conditions", conditions.size()},
                    {"samples", eval.predictions.size()},
                    {"source", cfg.dataset.empty() ? "grid" : "dataset"}};
  dir.write("metrics.json", dump(report.metrics));
  dir.write("predictions.csv", predictions_csv(eval));
  report.artifacts = {"metrics.json", "predictions.csv"};
  if (cfg.plot) {
    dir.write("va_scatter.svg", va_scatter_svg("targets vs generated", eval.targets, eval.predictions));
    report.artifacts.push_back("va_scatter.svg");
  }
}

void run_feedback(const RunConfig& cfg, const RunDirectory& dir, RunLog& log, RunReport& report) {
  const EmotionField field = cfg.field();
  const ToyGenerator generator(load_policy(cfg, cfg.grpo.eval_timesteps));
  const VAScore target(cfg.target_valence, cfg.target_arousal);

  std::shared_ptr<Transport> inner;
  if (!cfg.replay_log.empty()) {
    inner = std::make_shared<ReplayTransport>(read_exchange_log(cfg.replay_log));
    log.line("replaying " + cfg.replay_log);
  } else if (cfg.backend == "remote") {
    inner = std::make_shared<HttpChatTransport>(HttpChatTransport::from_environment());
  } else {
    inner = std::make_shared<MockTransport>(
        field, cfg.refiner == "identity" ? MockRefinerMode::kIdentity : MockRefinerMode::kContraction,
        cfg.contraction);
  }
  auto transport =
      std::make_shared<LoggingTransport>(inner, dir.path("exchanges.jsonl").string());
  WireEvaluator evaluator(transport);
  WireRefiner refiner(transport, cfg.feedback.refine_retries);

  const Prompt initial{cfg.prompt, condition_for(field, VAScore(kScaleMid, kScaleMid), cfg.prompt,
                                                 cfg.task.anchor_jitter)};
  const FeedbackResult result =
      run_feedback_loop(generator, evaluator, refiner, initial, target, cfg.feedback, cfg.seed);

  for (const auto& r : result.state.history) {
    log.line(fmt::format("iteration {}: best loss {:.4f} worst loss {:.4f}{}", r.iteration,
                         r.losses[r.best_index], r.losses[r.worst_index],
                         r.refine_failed ? " (refine failed: " + r.failure + ")" : ""));
  }
  ojson state = ojson::parse(result.state.to_json().dump());
  ojson selected = {{"id", result.selected.id},
                    {"loss", result.selected_loss},
                    {"index", result.selected_index},
                    {"latent", std::vector<double>(result.selected.latent.begin(),
                                                   result.selected.latent.end())}};
  if (result.selected_index >= 0) {
    selected["score"] = score_json(result.final_scores[result.selected_index]);
  }
  state["selected"] = selected;
  dir.write("state.json", dump(state));
  report.artifacts = {"state.json", "exchanges.jsonl"};
  report.metrics = {{"generation_rounds", result.state.generation_rounds},
                    {"iterations", result.state.history.size()},
                    {"early_stopped", result.state.early_stopped},
                    {"selected_loss", result.selected_loss},
                    {"final_prompt", result.state.current_prompt.text}};
  if (!result.state.history.empty()) {
    const auto& first = result.state.history.front();
    report.metrics["initial_best_loss"] = first.losses[first.best_index];
  }
  if (result.state.aborted) throw RemoteError(result.state.error);
  log.line(fmt::format("selected {} loss {:.4f}", result.selected.id, result.selected_loss));
}

void run_reward_check(const RunConfig& cfg, const RunDirectory& dir, RunLog& log,
                      RunReport& report) {
  require_path(cfg.corpus, "corpus");
  require_path(cfg.truth, "truth");
  const auto corpus = read_transcript_corpus(cfg.corpus);
  const auto truth = read_ground_truth(cfg.truth);
  const RewardAudit audit = audit_rewards(corpus, truth, cfg.weights);
  const std::string rendered = render_audit(audit);
  dir.write("rewards.csv", rendered);
  log.line(rendered.substr(0, rendered.size() - (rendered.ends_with('\n') ? 1 : 0)));
  report.artifacts = {"rewards.csv"};
  report.metrics = {{"records", audit.rows.size()},
                    {"well_formed", audit.well_formed},
                    {"task_hits", audit.task_hits},
                    {"tau", cfg.weights.tau}};
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Command command) {
  switch (command) {
    case Command::kBuildDataset: return "build-dataset";
    case Command::kTrain: return "train";
    case Command::kFeedback: return "feedback";
    case Command::kEval: return "eval";
    case Command::kRewardCheck: return "reward-check";
  }
  return "unknown";
}

Command parse_command(std::string_view name) {
  for (Command c : {Command::kBuildDataset, Command::kTrain, Command::kFeedback, Command::kEval,
                    Command::kRewardCheck}) {
    if (to_string(c) == name) return c;
  }
  throw ValidationError(fmt::format("unknown command '{}'", name));
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const NumericError*>(&error)) return 2;
  if (dynamic_cast<const RemoteError*>(&error)) return 3;
  return 1;
}

RunDirectory::RunDirectory(fs::path root, bool force) : root_(std::move(root)) {
  require(!root_.empty(), "--run-dir is required");
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw ValidationError(fmt::format("cannot create '{}': {}", root_.string(), ec.message()));

  const fs::path lock = root_ / kLockName;
  lock_fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw ValidationError(fmt::format("cannot open '{}'", lock.string()));
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw ValidationError(fmt::format("run directory '{}' is in use by another run", root_.string()));
  }

  std::vector<fs::path> existing;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.path().filename() != kLockName) existing.push_back(entry.path());
  }
  if (!existing.empty()) {
    if (!force) {
      ::close(lock_fd_);
      lock_fd_ = -1;
      throw ValidationError(fmt::format(
          "run directory '{}' is not empty; pass --force to overwrite", root_.string()));
    }
    for (const auto& p : existing) fs::remove_all(p);
  }
}

RunDirectory::~RunDirectory() {
  if (lock_fd_ >= 0) ::close(lock_fd_);
}

fs::path RunDirectory::write(const std::string& name, const std::string& content) const {
  const fs::path target = root_ / name;
  const fs::path tmp = root_ / (name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
    if (!out) throw ValidationError(fmt::format("cannot write '{}'", tmp.string()));
  }
  fs::rename(tmp, target);
  return target;
}

ojson RunReport::to_json() const {
  return {{"run_id", run_id},
          {"command", std::string(to_string(command))},
          {"started", started},
          {"finished", finished},
          {"exit_code", exit_code},
          {"error", error},
          {"metrics", metrics},
          {"artifacts", artifacts}};
}

int execute(Command command, const RunConfig& config, bool force, std::ostream& out,
            std::ostream& err) {
  std::unique_ptr<RunDirectory> dir;
  try {
    config.validate();
    dir = std::make_unique<RunDirectory>(config.run_dir, force);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }

  RunReport report;
  report.command = command;
  report.started = utc_timestamp();
  report.run_id = fmt::format("{}-{}-{}", to_string(command), compact_timestamp(report.started),
                              config.seed);
  dir->write("config.resolved", config.snapshot());

  try {
    RunLog log(out, dir->path("run.log"));
    log.line(fmt::format("run {} in {}", report.run_id, dir->root().string()));
    switch (command) {
      case Command::kBuildDataset: run_build_dataset(config, *dir, log, report); break;
      case Command::kTrain: run_train(config, *dir, log, report); break;
      case Command::kFeedback: run_feedback(config, *dir, log, report); break;
      case Command::kEval: run_eval(config, *dir, log, report); break;
      case Command::kRewardCheck: run_reward_check(config, *dir, log, report); break;
    }
  } catch (const std::exception& e) {
    report.exit_code = exit_code_for(e);
    report.error = e.what();
    err << "error: " << e.what() << '\n';
  }
  report.artifacts.insert(report.artifacts.begin(), {"config.resolved", "run.log"});
  report.finished = utc_timestamp();
  dir->write("report.json", dump(report.to_json()));
  return report.exit_code;
}

}  // namespace emofeed
