#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "emofeed/common.hpp"

namespace emofeed {

inline constexpr double kScaleMin = 1.0;
inline constexpr double kScaleMax = 9.0;
inline constexpr double kScaleMid = 5.0;

/// A (valence, arousal) pair on the closed 1..9 scale.
///
/// The constructor rejects anything outside the scale; use clamp_va() when
/// out-of-range values are expected (e.g. Gaussian draws).
class VAScore {
 public:
  VAScore() = default;
  VAScore(double valence, double arousal);

  double valence() const { return valence_; }
  double arousal() const { return arousal_; }

  friend bool operator==(const VAScore&, const VAScore&) = default;

 private:
  double valence_ = kScaleMid;
  double arousal_ = kScaleMid;
};

bool in_scale(double value);

/// Clamps each component into [1, 9]. Throws on non-finite input.
VAScore clamp_va(double raw_valence, double raw_arousal);

enum class EmotionClass {
  kAmusement,
  kAwe,
  kAnger,
  kContentment,
  kDisgust,
  kFear,
  kExcitement,
  kSadness,
};

inline constexpr std::array<EmotionClass, 8> kAllEmotionClasses = {
    EmotionClass::kAmusement, EmotionClass::kAwe,     EmotionClass::kAnger,
    EmotionClass::kContentment, EmotionClass::kDisgust, EmotionClass::kFear,
    EmotionClass::kExcitement, EmotionClass::kSadness,
};

std::string_view to_string(EmotionClass emotion);
std::optional<EmotionClass> try_parse_emotion(std::string_view label);
/// Throws ValidationError for anything outside the eight labels.
EmotionClass parse_emotion(std::string_view label);

/// Analytic emotion oracle over a latent space:
///   V = center + scale * tanh(<point, valence_axis>)
///   A = center + scale * tanh(<point, arousal_axis>)
class EmotionField {
 public:
  /// Default field on a latent space of `dim` >= 2: axes are e0 and e1.
  explicit EmotionField(int dim = 2, double scale = 4.0, double center = kScaleMid);
  EmotionField(Vec valence_axis, Vec arousal_axis, double scale = 4.0,
               double center = kScaleMid);

  int dim() const { return static_cast<int>(valence_axis_.size()); }
  double scale() const { return scale_; }
  double center() const { return center_; }
  const Vec& valence_axis() const { return valence_axis_; }
  const Vec& arousal_axis() const { return arousal_axis_; }

 private:
  Vec valence_axis_;
  Vec arousal_axis_;
  double scale_;
  double center_;
};

template <typename Derived>
VAScore field_evaluate(const EmotionField& field,
                       const Eigen::MatrixBase<Derived>& point) {
  require(point.size() == field.dim(),
          "field_evaluate: point has dimension " + std::to_string(point.size()) +
              ", field expects " + std::to_string(field.dim()));
  const double v = field.center() + field.scale() * std::tanh(point.dot(field.valence_axis()));
  const double a = field.center() + field.scale() * std::tanh(point.dot(field.arousal_axis()));
  // The open interval is inside [1, 9] for the default field; wider custom
  // fields clamp explicitly.
  return clamp_va(v, a);
}

/// A latent point whose field score is `score` (projections clipped just
/// inside the tanh asymptote so extreme scores stay finite).
Vec field_preimage(const EmotionField& field, const VAScore& score);

/// Quadrant + dominance partition of the V-A square.
///
/// Valence >= 5 is positive, arousal >= 5 is high. Inside a quadrant the
/// arousal-dominant label is chosen when |A-5| >= |V-5| (ties go to arousal):
///   positive/high: excitement | amusement
///   positive/low:  contentment | awe
///   negative/high: fear | anger
///   negative/low:  sadness | disgust
EmotionClass field_classify(const VAScore& score);

struct EmotionErrors {
  double v_error = 0.0;
  double a_error = 0.0;
};

/// Mean absolute valence / arousal error.
EmotionErrors emotion_errors(std::span<const VAScore> predictions,
                             std::span<const VAScore> targets);

}  // namespace emofeed
