#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emofeed/feedback.hpp"
#include "emofeed/grpo.hpp"
#include "emofeed/reward.hpp"
#include "emofeed/toy_task.hpp"
#include "emofeed/trainer.hpp"

namespace emofeed {

/// Every knob a command can read. Resolution order: defaults, then the
/// config file, then command-line flags.
struct RunConfig {
  std::uint64_t seed = 17;

  GrpoConfig grpo;
  TrainerOptions trainer;
  int checkpoint_interval = 100;
  int latent_dim = 2;
  int hidden_dim = 32;
  ToyTaskConfig task;
  RewardWeights weights;
  double field_scale = 4.0;
  double field_center = kScaleMid;

  FeedbackConfig feedback;
  std::string backend = "mock";     ///< mock | remote
  std::string refiner = "contraction";  ///< contraction | identity (mock backend)
  double contraction = 0.3;
  std::string prompt = "a quiet city street";
  double target_valence = 7.5;
  double target_arousal = 7.0;

  std::string run_dir;
  std::string checkpoint;
  std::string lexicon;
  std::string lexicon_columns = "default";  ///< default | norms
  std::string mapping;
  std::string captions;
  std::string dataset;
  std::optional<double> test_fraction;
  std::string corpus;
  std::string truth;
  std::string replay_log;
  bool plot = false;

  /// Sets one key from its text form. Throws ValidationError on unknown keys
  /// or unparseable values.
  void set(const std::string& key, const std::string& value);
  /// Applies `key = value` lines (blank lines and `#` comments ignored).
  void apply_file(const std::string& path);
  /// Cross-field checks; call once everything is applied.
  void validate() const;
  /// Sorted `key=value` lines, re-readable by apply_file.
  std::string snapshot() const;

  EmotionField field() const;

  /// Known keys with a one-line description each.
  static const std::vector<std::pair<std::string, std::string>>& keys();
};

}  // namespace emofeed
