#include "emofeed/emotion.hpp"

#include <algorithm>
#include <fmt/format.h>

namespace emofeed {

bool in_scale(double value) { return value >= kScaleMin && value <= kScaleMax; }

VAScore::VAScore(double valence, double arousal) : valence_(valence), arousal_(arousal) {
  if (!in_scale(valence) || !in_scale(arousal)) {
    throw ValidationError(
        fmt::format("VAScore ({}, {}) outside the [1, 9] scale", valence, arousal));
  }
}

VAScore clamp_va(double raw_valence, double raw_arousal) {
  if (!std::isfinite(raw_valence) || !std::isfinite(raw_arousal)) {
    throw ValidationError("clamp_va: non-finite input");
  }
  return VAScore(std::clamp(raw_valence, kScaleMin, kScaleMax),
                 std::clamp(raw_arousal, kScaleMin, kScaleMax));
}

namespace {

constexpr std::array<std::string_view, 8> kLabels = {
    "amusement", "awe", "anger", "contentment", "disgust", "fear", "excitement", "sadness",
};

}  // namespace

std::string_view to_string(EmotionClass emotion) {
  return kLabels[static_cast<std::size_t>(emotion)];
}

std::optional<EmotionClass> try_parse_emotion(std::string_view label) {
  for (std::size_t i = 0; i < kLabels.size(); ++i) {
    if (kLabels[i] == label) return static_cast<EmotionClass>(i);
  }
  return std::nullopt;
}

EmotionClass parse_emotion(std::string_view label) {
  auto parsed = try_parse_emotion(label);
  if (!parsed) throw ValidationError(fmt::format("unknown emotion class '{}'", label));
  return *parsed;
}

EmotionField::EmotionField(int dim, double scale, double center)
    : EmotionField(Vec::Unit(std::max(dim, 2), 0), Vec::Unit(std::max(dim, 2), 1), scale,
                   center) {
  require(dim >= 2, "EmotionField: latent dimension must be at least 2");
}

EmotionField::EmotionField(Vec valence_axis, Vec arousal_axis, double scale, double center)
    : valence_axis_(std::move(valence_axis)),
      arousal_axis_(std::move(arousal_axis)),
      scale_(scale),
      center_(center) {
  require(scale_ > 0.0 && std::isfinite(scale_), "EmotionField: scale must be positive");
  require(std::isfinite(center_), "EmotionField: center must be finite");
  require(valence_axis_.size() == arousal_axis_.size() && valence_axis_.size() >= 1,
          "EmotionField: axes must share a dimension");
  constexpr double kTol = 1e-9;
  require(std::abs(valence_axis_.norm() - 1.0) < kTol &&
              std::abs(arousal_axis_.norm() - 1.0) < kTol &&
              std::abs(valence_axis_.dot(arousal_axis_)) < kTol,
          "EmotionField: axes must be orthonormal");
}

Vec field_preimage(const EmotionField& field, const VAScore& score) {
  constexpr double kEdge = 1.0 - 1e-6;
  auto project = [&](double value) {
    const double u = std::clamp((value - field.center()) / field.scale(), -kEdge, kEdge);
    return std::atanh(u);
  };
  return project(score.valence()) * field.valence_axis() +
         project(score.arousal()) * field.arousal_axis();
}

EmotionClass field_classify(const VAScore& score) {
  const double dv = score.valence() - kScaleMid;
  const double da = score.arousal() - kScaleMid;
  const bool positive = dv >= 0.0;
  const bool high = da >= 0.0;
  const bool arousal_dominant = std::abs(da) >= std::abs(dv);
  if (positive && high) return arousal_dominant ? EmotionClass::kExcitement : EmotionClass::kAmusement;
  if (positive) return arousal_dominant ? EmotionClass::kContentment : EmotionClass::kAwe;
  if (high) return arousal_dominant ? EmotionClass::kFear : EmotionClass::kAnger;
  return arousal_dominant ? EmotionClass::kSadness : EmotionClass::kDisgust;
}

EmotionErrors emotion_errors(std::span<const VAScore> predictions,
                             std::span<const VAScore> targets) {
  require(!predictions.empty(), "emotion_errors: empty input");
  require(predictions.size() == targets.size(),
          fmt::format("emotion_errors: {} predictions vs {} targets", predictions.size(),
                      targets.size()));
  EmotionErrors errors;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    errors.v_error += std::abs(predictions[i].valence() - targets[i].valence());
    errors.a_error += std::abs(predictions[i].arousal() - targets[i].arousal());
  }
  const auto n = static_cast<double>(predictions.size());
  errors.v_error /= n;
  errors.a_error /= n;
  return errors;
}

}  // namespace emofeed
