#pragma once

#include <functional>
#include <vector>

#include "emofeed/reward.hpp"
#include "emofeed/toy_generator.hpp"

namespace emofeed {

/// The desk-scale emotion task the toy generator is trained on.
struct ToyTaskConfig {
  /// Training targets are drawn uniformly from [target_low, target_high]^2.
  double target_low = 2.0;
  double target_high = 8.0;
  /// Std of the Gaussian offset between a target's field preimage and its
  /// semantic anchor.
  double anchor_jitter = 0.25;
  /// Held-out targets form a grid_points x grid_points lattice.
  int grid_points = 5;
  /// Samples generated per held-out condition.
  int eval_group_size = 8;
};

ConditionEmbedding sample_toy_condition(const EmotionField& field, const ToyTaskConfig& config,
                                        Rng& rng);

/// Held-out lattice of targets; anchors sit exactly at the field preimage.
std::vector<ConditionEmbedding> heldout_conditions(const EmotionField& field,
                                                   const ToyTaskConfig& config);

/// A condition anchored at a deterministic offset derived from `key`.
ConditionEmbedding condition_for(const EmotionField& field, const VAScore& target,
                                 const std::string& key, double anchor_jitter);

using SampleGenerator = std::function<Vec(const ConditionEmbedding&, Rng&)>;

struct HeldoutEvaluation {
  EmotionErrors errors;
  std::vector<VAScore> predictions;
  std::vector<VAScore> targets;
};

/// Generates `group_size` samples per condition, scores them with the field
/// and reports V-Error / A-Error against each condition's target.
HeldoutEvaluation evaluate_generator(const SampleGenerator& generator,
                                     const std::vector<ConditionEmbedding>& conditions,
                                     const EmotionField& field, int group_size,
                                     std::uint64_t seed);

SampleGenerator policy_generator(const MlpPolicy& policy);

/// eval_timesteps > 0 evaluates with that many denoising steps.
TrainingTask<MlpPolicy> make_toy_training_task(const EmotionField& field,
                                               const ToyTaskConfig& task_config,
                                               const RewardWeights& weights,
                                               std::uint64_t eval_seed,
                                               int eval_timesteps = 0);

}  // namespace emofeed
