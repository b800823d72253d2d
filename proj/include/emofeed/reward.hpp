#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "emofeed/emotion.hpp"

namespace emofeed {

using AnswerValue = std::variant<double, std::string>;

/// An evaluator response split into its think and answer segments.
struct Transcript {
  std::string raw;
  std::string think;
  std::map<std::string, AnswerValue> answer_fields;
  bool well_formed = false;

  std::optional<double> number(const std::string& key) const;
  std::optional<std::string> text(const std::string& key) const;
};

/// Never throws. Well-formed means: optional whitespace, one
/// <think>...</think>, optional whitespace, one <answer>...</answer>, optional
/// whitespace, with the answer decoding as a flat JSON object of numbers and
/// strings.
Transcript parse_transcript(const std::string& raw);

enum class StepRewardMode {
  kPerDimension,  ///< 0.5 credit per component within tau
  kJoint,         ///< 1 only when both components are within tau
};

struct RewardWeights {
  double alpha1 = 0.25;  ///< format reward
  double alpha2 = 0.75;  ///< task reward (regression or classification)
  double tau = 0.70;
  double emotion_weight = 1.0;
  double content_weight = 1.0;
  StepRewardMode step_mode = StepRewardMode::kPerDimension;

  void validate() const;
};

struct RewardBreakdown {
  double emotion = 0.0;
  double content = 0.0;
  double total = 0.0;
};

enum class RewardTask { kRegression, kClassification };

std::string_view to_string(RewardTask task);
RewardTask parse_reward_task(std::string_view name);

double format_reward(const std::string& raw);

/// |delta| == tau counts as inside.
double va_step_reward(const VAScore& pred, const VAScore& gt, double tau,
                      StepRewardMode mode = StepRewardMode::kPerDimension);

/// max(0, 1 - (|dV| + |dA|) / 16).
double va_continuous_reward(const VAScore& pred, const VAScore& gt);

double classification_reward(std::optional<EmotionClass> pred, EmotionClass gt);

/// Reads "valence"/"arousal" from a well-formed transcript. Absent when the
/// transcript is malformed, a field is missing or non-numeric, or a value lies
/// outside the scale.
std::optional<VAScore> answer_va(const Transcript& transcript);
std::optional<EmotionClass> answer_class(const Transcript& transcript);

/// alpha1 * format + alpha2 * task. Throws when the ground truth the task
/// needs is missing.
double understanding_reward(const std::string& transcript_raw, RewardTask task,
                            const std::optional<VAScore>& gt_va,
                            const std::optional<EmotionClass>& gt_class,
                            const RewardWeights& weights);

/// Emotion fidelity of a generated latent plus the Gaussian-kernel content
/// reward exp(-|x - anchor|^2 / d).
RewardBreakdown generator_reward(const Vec& final_sample, const VAScore& condition,
                                 const EmotionField& field, const Vec& anchor,
                                 const RewardWeights& weights);

// Transcript corpus files: records separated by a line containing only "---".

std::vector<std::string> read_transcript_corpus(std::istream& in);
std::vector<std::string> read_transcript_corpus(const std::string& path);

/// One line of a ground-truth sidecar:
///   regression <valence> <arousal>
///   classification <label>
struct GroundTruth {
  RewardTask task = RewardTask::kRegression;
  std::optional<VAScore> va;
  std::optional<EmotionClass> emotion;
};

GroundTruth parse_ground_truth(const std::string& line);
std::vector<GroundTruth> read_ground_truth(const std::string& path);

struct RewardAuditRow {
  std::size_t index = 0;
  double format = 0.0;
  double task = 0.0;
  double combined = 0.0;
};

struct RewardAudit {
  std::vector<RewardAuditRow> rows;
  std::size_t well_formed = 0;
  std::size_t task_hits = 0;  ///< rows whose task reward is 1
};

RewardAudit audit_rewards(const std::vector<std::string>& corpus,
                          const std::vector<GroundTruth>& truth,
                          const RewardWeights& weights);

/// Stable text rendering used for golden comparisons.
std::string render_audit(const RewardAudit& audit);

}  // namespace emofeed
