#include "emofeed/reward.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

namespace emofeed {

std::optional<double> Transcript::number(const std::string& key) const {
  auto it = answer_fields.find(key);
  if (it == answer_fields.end()) return std::nullopt;
  if (const auto* value = std::get_if<double>(&it->second)) return *value;
  return std::nullopt;
}

std::optional<std::string> Transcript::text(const std::string& key) const {
  auto it = answer_fields.find(key);
  if (it == answer_fields.end()) return std::nullopt;
  if (const auto* value = std::get_if<std::string>(&it->second)) return *value;
  return std::nullopt;
}

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

std::size_t skip_space(std::string_view text, std::size_t pos) {
  while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  return pos;
}

bool contains_tag(std::string_view segment) {
  for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
    if (segment.find(tag) != std::string_view::npos) return true;
  }
  return false;
}

// Extracts the body of `open ... close` starting exactly at `pos`.
std::optional<std::string_view> take_segment(std::string_view text, std::size_t& pos,
                                             std::string_view open, std::string_view close) {
  if (text.substr(pos, open.size()) != open) return std::nullopt;
  const std::size_t body = pos + open.size();
  const std::size_t end = text.find(close, body);
  if (end == std::string_view::npos) return std::nullopt;
  auto segment = text.substr(body, end - body);
  if (contains_tag(segment)) return std::nullopt;
  pos = end + close.size();
  return segment;
}

}  // namespace

Transcript parse_transcript(const std::string& raw) {
  Transcript transcript;
  transcript.raw = raw;
  std::string_view text = raw;

  std::size_t pos = skip_space(text, 0);
  auto think = take_segment(text, pos, kThinkOpen, kThinkClose);
  if (!think) return transcript;
  pos = skip_space(text, pos);
  auto answer = take_segment(text, pos, kAnswerOpen, kAnswerClose);
  if (!answer) return transcript;
  if (skip_space(text, pos) != text.size()) return transcript;

  auto decoded = nlohmann::json::parse(answer->begin(), answer->end(), nullptr, false);
  if (decoded.is_discarded() || !decoded.is_object()) return transcript;

  std::map<std::string, AnswerValue> fields;
  for (const auto& [key, value] : decoded.items()) {
    if (value.is_number()) {
      fields.emplace(key, value.get<double>());
    } else if (value.is_string()) {
      fields.emplace(key, value.get<std::string>());
    } else {
      return transcript;
    }
  }
  transcript.think = std::string(*think);
  transcript.answer_fields = std::move(fields);
  transcript.well_formed = true;
  return transcript;
}

void RewardWeights::validate() const {
  for (double w : {alpha1, alpha2, emotion_weight, content_weight}) {
    require(std::isfinite(w) && w >= 0.0, "reward weights must be finite and nonnegative");
  }
  require(std::isfinite(tau) && tau > 0.0, "reward threshold tau must be positive");
}

std::string_view to_string(RewardTask task) {
  return task == RewardTask::kRegression ? "regression" : "classification";
}

RewardTask parse_reward_task(std::string_view name) {
  if (name == "regression") return RewardTask::kRegression;
  if (name == "classification") return RewardTask::kClassification;
  throw ValidationError(fmt::format("unknown reward task '{}'", name));
}

double format_reward(const std::string& raw) {
  return parse_transcript(raw).well_formed ? 1.0 : 0.0;
}

double va_step_reward(const VAScore& pred, const VAScore& gt, double tau, StepRewardMode mode) {
  // Scores are two-decimal quantities; 5.70 - 5.00 is 0.7000000000000002 in
  // binary, so the inclusive boundary carries a small slack.
  constexpr double kBoundarySlack = 1e-9;
  const bool v_ok = std::abs(pred.valence() - gt.valence()) <= tau + kBoundarySlack;
  const bool a_ok = std::abs(pred.arousal() - gt.arousal()) <= tau + kBoundarySlack;
  if (mode == StepRewardMode::kJoint) return (v_ok && a_ok) ? 1.0 : 0.0;
  return 0.5 * static_cast<double>(v_ok) + 0.5 * static_cast<double>(a_ok);
}

double va_continuous_reward(const VAScore& pred, const VAScore& gt) {
  // Full valence span plus full arousal span.
  constexpr double kSpan = 2.0 * (kScaleMax - kScaleMin);
  const double discrepancy =
      std::abs(pred.valence() - gt.valence()) + std::abs(pred.arousal() - gt.arousal());
  return std::max(0.0, 1.0 - discrepancy / kSpan);
}

double classification_reward(std::optional<EmotionClass> pred, EmotionClass gt) {
  return (pred && *pred == gt) ? 1.0 : 0.0;
}

std::optional<VAScore> answer_va(const Transcript& transcript) {
  if (!transcript.well_formed) return std::nullopt;
  auto v = transcript.number("valence");
  auto a = transcript.number("arousal");
  if (!v || !a || !in_scale(*v) || !in_scale(*a)) return std::nullopt;
  return VAScore(*v, *a);
}

std::optional<EmotionClass> answer_class(const Transcript& transcript) {
  if (!transcript.well_formed) return std::nullopt;
  auto label = transcript.text("emotion_class");
  if (!label) return std::nullopt;
  return try_parse_emotion(*label);
}

double understanding_reward(const std::string& transcript_raw, RewardTask task,
                            const std::optional<VAScore>& gt_va,
                            const std::optional<EmotionClass>& gt_class,
                            const RewardWeights& weights) {
  const Transcript transcript = parse_transcript(transcript_raw);
  double task_reward = 0.0;
  if (task == RewardTask::kRegression) {
    require(gt_va.has_value(), "understanding_reward: regression task needs a V-A ground truth");
    if (auto pred = answer_va(transcript)) {
      task_reward = va_step_reward(*pred, *gt_va, weights.tau, weights.step_mode);
    }
  } else {
    require(gt_class.has_value(),
            "understanding_reward: classification task needs a class ground truth");
    task_reward = classification_reward(answer_class(transcript), *gt_class);
  }
  const double format = transcript.well_formed ? 1.0 : 0.0;
  return weights.alpha1 * format + weights.alpha2 * task_reward;
}

RewardBreakdown generator_reward(const Vec& final_sample, const VAScore& condition,
                                 const EmotionField& field, const Vec& anchor,
                                 const RewardWeights& weights) {
  require(final_sample.size() == anchor.size(),
          "generator_reward: sample and anchor dimensions differ");
  RewardBreakdown out;
  out.emotion = va_continuous_reward(field_evaluate(field, final_sample), condition);
  const double d = static_cast<double>(final_sample.size());
  out.content = std::exp(-(final_sample - anchor).squaredNorm() / d);
  out.total = weights.emotion_weight * out.emotion + weights.content_weight * out.content;
  return out;
}

std::vector<std::string> read_transcript_corpus(std::istream& in) {
  std::vector<std::string> records;
  std::string current;
  bool has_content = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "---") {
      records.push_back(current);
      current.clear();
      has_content = false;
      continue;
    }
    if (has_content) current += '\n';
    current += line;
    has_content = true;
  }
  if (has_content) records.push_back(current);
  return records;
}

std::vector<std::string> read_transcript_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot read transcript corpus '{}'", path));
  return read_transcript_corpus(in);
}

GroundTruth parse_ground_truth(const std::string& line) {
  std::istringstream in(line);
  std::string task_name;
  in >> task_name;
  GroundTruth truth;
  truth.task = parse_reward_task(task_name);
  if (truth.task == RewardTask::kRegression) {
    double v = 0.0;
    double a = 0.0;
    require(static_cast<bool>(in >> v >> a),
            fmt::format("ground truth line '{}': expected two numbers", line));
    truth.va = VAScore(v, a);
  } else {
    std::string label;
    require(static_cast<bool>(in >> label),
            fmt::format("ground truth line '{}': expected a class label", line));
    truth.emotion = parse_emotion(label);
  }
  return truth;
}

std::vector<GroundTruth> read_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot read ground truth '{}'", path));
  std::vector<GroundTruth> truth;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    truth.push_back(parse_ground_truth(line));
  }
  return truth;
}

RewardAudit audit_rewards(const std::vector<std::string>& corpus,
                          const std::vector<GroundTruth>& truth,
                          const RewardWeights& weights) {
  require(corpus.size() == truth.size(),
          fmt::format("reward audit: {} transcripts but {} ground-truth lines", corpus.size(),
                      truth.size()));
  RewardAudit audit;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Transcript transcript = parse_transcript(corpus[i]);
    RewardAuditRow row;
    row.index = i;
    row.format = transcript.well_formed ? 1.0 : 0.0;
    if (truth[i].task == RewardTask::kRegression) {
      if (auto pred = answer_va(transcript)) {
        row.task = va_step_reward(*pred, *truth[i].va, weights.tau, weights.step_mode);
      }
    } else {
      row.task = classification_reward(answer_class(transcript), *truth[i].emotion);
    }
    row.combined = understanding_reward(corpus[i], truth[i].task, truth[i].va, truth[i].emotion,
                                        weights);
    audit.well_formed += transcript.well_formed ? 1 : 0;
    audit.task_hits += row.task == 1.0 ? 1 : 0;
    audit.rows.push_back(row);
  }
  return audit;
}

std::string render_audit(const RewardAudit& audit) {
  std::string out = "index,format,task,combined\n";
  for (const auto& row : audit.rows) {
    out += fmt::format("{},{:.4f},{:.4f},{:.4f}\n", row.index, row.format, row.task,
                       row.combined);
  }
  out += fmt::format("# records={} well_formed={} task_hits={}\n", audit.rows.size(),
                     audit.well_formed, audit.task_hits);
  return out;
}

}  // namespace emofeed
