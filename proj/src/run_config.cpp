#include "emofeed/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <cmath>
#include <functional>
#include <map>

#include <fmt/format.h>

namespace emofeed {

namespace {

struct Field {
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ValidationError(fmt::format("config '{}': '{}' is not a number", key, v));
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError(fmt::format("config '{}': '{}' is not an integer", key, v));
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(fmt::format("config '{}': '{}' is not a boolean", key, v));
}

std::string num(double d) { return fmt::format("{}", d); }

using Table = std::map<std::string, Field>;

#define EMOFEED_REAL(key, expr, help)                                               \
  table[key] = {help, [](RunConfig& c, const std::string& v) { expr = to_double(key, v); }, \
                [](const RunConfig& c) { return num(expr); }}
#define EMOFEED_INT(key, expr, help)                                                  \
  table[key] = {help,                                                                 \
                [](RunConfig& c, const std::string& v) {                              \
                  expr = static_cast<std::remove_reference_t<decltype(expr)>>(to_int(key, v)); \
                },                                                                    \
                [](const RunConfig& c) { return fmt::format("{}", expr); }}
#define EMOFEED_BOOL(key, expr, help)                                              \
  table[key] = {help, [](RunConfig& c, const std::string& v) { expr = to_bool(key, v); }, \
                [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }}
#define EMOFEED_TEXT(key, expr, help)                                      \
  table[key] = {help, [](RunConfig& c, const std::string& v) { expr = v; }, \
                [](const RunConfig& c) { return expr; }}

const Table& table() {
  static const Table t = [] {
    Table table;
    EMOFEED_INT("seed", c.seed, "master random seed");
    EMOFEED_INT("group_size", c.grpo.group_size, "GRPO rollouts per condition");
    EMOFEED_INT("timesteps", c.grpo.timesteps, "denoising steps during training");
    EMOFEED_INT("eval_timesteps", c.grpo.eval_timesteps, "denoising steps during evaluation");
    EMOFEED_REAL("clip_epsilon", c.grpo.clip_epsilon, "ratio clip half-width");
    EMOFEED_REAL("kl_beta", c.grpo.kl_beta, "KL penalty weight");
    EMOFEED_INT("steps", c.grpo.steps, "training steps");
    EMOFEED_INT("batch_groups", c.grpo.batch_groups, "conditions per training step");
    EMOFEED_REAL("learning_rate", c.grpo.learning_rate, "initial learning rate");
    EMOFEED_REAL("final_lr_fraction", c.grpo.final_lr_fraction,
                 "final learning rate as a fraction of the initial one");
    EMOFEED_REAL("std_floor", c.grpo.std_floor, "groups with reward std below this are skipped");
    table["std_mode"] = {"population | sample",
                         [](RunConfig& c, const std::string& v) {
                           if (v == "population") c.grpo.std_mode = StdMode::kPopulation;
                           else if (v == "sample") c.grpo.std_mode = StdMode::kSample;
                           else throw ValidationError("config 'std_mode': population | sample");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.grpo.std_mode == StdMode::kPopulation
                                                  ? "population" : "sample");
                         }};
    EMOFEED_INT("minibatches", c.trainer.minibatches, "sequential updates per training step");
    table["optimizer"] = {"adam | sgd",
                          [](RunConfig& c, const std::string& v) {
                            if (v == "adam") c.trainer.optimizer = OptimizerKind::kAdam;
                            else if (v == "sgd") c.trainer.optimizer = OptimizerKind::kSgd;
                            else throw ValidationError("config 'optimizer': adam | sgd");
                          },
                          [](const RunConfig& c) {
                            return std::string(c.trainer.optimizer == OptimizerKind::kAdam
                                                   ? "adam" : "sgd");
                          }};
    EMOFEED_INT("eval_interval", c.trainer.eval_interval, "steps between held-out evaluations");
    EMOFEED_INT("checkpoint_interval", c.checkpoint_interval, "steps between checkpoints");
    EMOFEED_INT("latent_dim", c.latent_dim, "latent dimension of the toy generator");
    EMOFEED_INT("hidden_dim", c.hidden_dim, "hidden width of the drift network");
    EMOFEED_REAL("target_low", c.task.target_low, "lowest training target component");
    EMOFEED_REAL("target_high", c.task.target_high, "highest training target component");
    EMOFEED_REAL("anchor_jitter", c.task.anchor_jitter, "std of anchor offsets");
    EMOFEED_INT("grid_points", c.task.grid_points, "held-out grid points per axis");
    EMOFEED_INT("eval_group_size", c.task.eval_group_size, "samples per held-out condition");
    EMOFEED_REAL("alpha1", c.weights.alpha1, "format reward weight");
    EMOFEED_REAL("alpha2", c.weights.alpha2, "task reward weight");
    EMOFEED_REAL("tau", c.weights.tau, "V-A step reward threshold");
    EMOFEED_REAL("emotion_weight", c.weights.emotion_weight, "generator emotion reward weight");
    EMOFEED_REAL("content_weight", c.weights.content_weight, "generator content reward weight");
    table["step_mode"] = {"per_dimension | joint",
                          [](RunConfig& c, const std::string& v) {
                            if (v == "per_dimension") c.weights.step_mode = StepRewardMode::kPerDimension;
                            else if (v == "joint") c.weights.step_mode = StepRewardMode::kJoint;
                            else throw ValidationError("config 'step_mode': per_dimension | joint");
                          },
                          [](const RunConfig& c) {
                            return std::string(c.weights.step_mode == StepRewardMode::kJoint
                                                   ? "joint" : "per_dimension");
                          }};
    EMOFEED_REAL("field_scale", c.field_scale, "emotion field half-range");
    EMOFEED_REAL("field_center", c.field_center, "emotion field center");
    EMOFEED_INT("iterations", c.feedback.max_iterations, "feedback iterations");
    EMOFEED_INT("feedback_group_size", c.feedback.group_size, "samples per feedback round");
    table["loss_metric"] = {"l1 | squared",
                            [](RunConfig& c, const std::string& v) {
                              if (v == "l1") c.feedback.loss_metric = LossMetric::kL1;
                              else if (v == "squared") c.feedback.loss_metric = LossMetric::kSquared;
                              else throw ValidationError("config 'loss_metric': l1 | squared");
                            },
                            [](const RunConfig& c) {
                              return std::string(c.feedback.loss_metric == LossMetric::kL1
                                                     ? "l1" : "squared");
                            }};
    EMOFEED_BOOL("stop_on_zero_loss", c.feedback.stop_on_zero_loss, "stop when a sample hits the target");
    EMOFEED_INT("max_in_flight", c.feedback.max_in_flight, "concurrent evaluation requests");
    EMOFEED_INT("refine_retries", c.feedback.refine_retries, "retries for refiner exchanges");
    table["final_selection"] = {"best_of_last | best_overall",
                                [](RunConfig& c, const std::string& v) {
                                  if (v == "best_of_last") c.feedback.final_selection = FinalSelection::kBestOfLast;
                                  else if (v == "best_overall") c.feedback.final_selection = FinalSelection::kBestOverall;
                                  else throw ValidationError("config 'final_selection': best_of_last | best_overall");
                                },
                                [](const RunConfig& c) {
                                  return std::string(c.feedback.final_selection == FinalSelection::kBestOfLast
                                                         ? "best_of_last" : "best_overall");
                                }};
    EMOFEED_TEXT("backend", c.backend, "mock | remote");
    EMOFEED_TEXT("refiner", c.refiner, "contraction | identity (mock backend)");
    EMOFEED_REAL("contraction", c.contraction, "mock refiner step toward the target");
    EMOFEED_TEXT("prompt", c.prompt, "initial prompt for the feedback loop");
    EMOFEED_REAL("target_valence", c.target_valence, "feedback target valence");
    EMOFEED_REAL("target_arousal", c.target_arousal, "feedback target arousal");
    EMOFEED_TEXT("run_dir", c.run_dir, "run directory");
    EMOFEED_TEXT("checkpoint", c.checkpoint, "weight file to load");
    EMOFEED_TEXT("lexicon", c.lexicon, "lexicon CSV");
    EMOFEED_TEXT("lexicon_columns", c.lexicon_columns, "default | norms");
    EMOFEED_TEXT("mapping", c.mapping, "category mapping file");
    EMOFEED_TEXT("captions", c.captions, "captions JSONL");
    EMOFEED_TEXT("dataset", c.dataset, "dataset JSONL for evaluation");
    table["test_fraction"] = {"hash-based test split fraction (unset: per caption)",
                              [](RunConfig& c, const std::string& v) {
                                c.test_fraction = v.empty() ? std::nullopt
                                                            : std::optional(to_double("test_fraction", v));
                              },
                              [](const RunConfig& c) {
                                return c.test_fraction ? num(*c.test_fraction) : std::string();
                              }};
    EMOFEED_TEXT("corpus", c.corpus, "transcript corpus");
    EMOFEED_TEXT("truth", c.truth, "ground-truth sidecar for the corpus");
    EMOFEED_TEXT("replay_log", c.replay_log, "exchange log to replay instead of a live backend");
    EMOFEED_BOOL("plot", c.plot, "write SVG plots");
    return table;
  }();
  return t;
}

#undef EMOFEED_REAL
#undef EMOFEED_INT
#undef EMOFEED_BOOL
#undef EMOFEED_TEXT

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = table().find(key);
  if (it == table().end()) throw ValidationError(fmt::format("unknown config key '{}'", key));
  it->second.set(*this, value);
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot read config file '{}'", path));
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(fmt::format("config file '{}' line {}: expected key = value", path, row));
    }
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::validate() const {
  grpo.validate();
  weights.validate();
  feedback.validate();
  require(latent_dim >= 2, "latent_dim must be at least 2");
  require(hidden_dim >= 1, "hidden_dim must be positive");
  require(checkpoint_interval >= 1, "checkpoint_interval must be positive");
  require(trainer.minibatches >= 1 && trainer.minibatches <= grpo.batch_groups,
          "minibatches must lie in [1, batch_groups]");
  require(task.target_low >= kScaleMin && task.target_high <= kScaleMax &&
              task.target_low <= task.target_high,
          "training targets must lie inside [1, 9]");
  require(task.anchor_jitter >= 0.0, "anchor_jitter must be nonnegative");
  require(task.grid_points >= 1 && task.eval_group_size >= 1, "held-out grid must be nonempty");
  require(backend == "mock" || backend == "remote", "backend must be mock or remote");
  require(refiner == "contraction" || refiner == "identity",
          "refiner must be contraction or identity");
  require(contraction > 0.0 && contraction <= 1.0, "contraction must lie in (0, 1]");
  require(in_scale(target_valence) && in_scale(target_arousal),
          "feedback target must lie inside [1, 9]");
  require(lexicon_columns == "default" || lexicon_columns == "norms",
          "lexicon_columns must be default or norms");
  field();
}

std::string RunConfig::snapshot() const {
  std::string out;
  for (const auto& [key, field] : table()) out += fmt::format("{} = {}\n", key, field.get(*this));
  return out;
}

EmotionField RunConfig::field() const {
  return EmotionField(latent_dim, field_scale, field_center);
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::keys() {
  static const auto k = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, field] : table()) out.emplace_back(key, field.help);
    return out;
  }();
  return k;
}

}  // namespace emofeed
