#include "emofeed/toy_task.hpp"

namespace emofeed {

ConditionEmbedding sample_toy_condition(const EmotionField& field, const ToyTaskConfig& config,
                                        Rng& rng) {
  std::uniform_real_distribution<double> uniform(config.target_low, config.target_high);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double v = uniform(rng);
  const double a = uniform(rng);
  ConditionEmbedding condition{VAScore(v, a), {}};
  condition.anchor = field_preimage(field, condition.target) +
                     config.anchor_jitter * Vec::NullaryExpr(field.dim(), [&] { return normal(rng); });
  return condition;
}

std::vector<ConditionEmbedding> heldout_conditions(const EmotionField& field,
                                                   const ToyTaskConfig& config) {
  require(config.grid_points >= 1, "heldout grid needs at least one point");
  std::vector<ConditionEmbedding> out;
  const int n = config.grid_points;
  auto coord = [&](int i) {
    if (n == 1) return 0.5 * (config.target_low + config.target_high);
    return config.target_low + (config.target_high - config.target_low) * i / (n - 1);
  };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      VAScore target(coord(i), coord(j));
      out.push_back({target, field_preimage(field, target)});
    }
  }
  return out;
}

ConditionEmbedding condition_for(const EmotionField& field, const VAScore& target,
                                 const std::string& key, double anchor_jitter) {
  Rng rng(mix_seed(fnv1a(key)));
  std::normal_distribution<double> normal(0.0, 1.0);
  return {target, field_preimage(field, target) +
                      anchor_jitter * Vec::NullaryExpr(field.dim(), [&] { return normal(rng); })};
}

HeldoutEvaluation evaluate_generator(const SampleGenerator& generator,
                                     const std::vector<ConditionEmbedding>& conditions,
                                     const EmotionField& field, int group_size,
                                     std::uint64_t seed) {
  require(!conditions.empty(), "evaluate_generator: no conditions");
  require(group_size >= 1, "evaluate_generator: group_size must be positive");
  HeldoutEvaluation eval;
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    for (int i = 0; i < group_size; ++i) {
      Rng rng(mix_seed(mix_seed(seed, c), static_cast<std::uint64_t>(i)));
      eval.predictions.push_back(field_evaluate(field, generator(conditions[c], rng)));
      eval.targets.push_back(conditions[c].target);
    }
  }
  eval.errors = emotion_errors(eval.predictions, eval.targets);
  return eval;
}

SampleGenerator policy_generator(const MlpPolicy& policy) {
  return [policy](const ConditionEmbedding& condition, Rng& rng) {
    return sample_trajectory(policy, condition, policy.timesteps(), rng).final_sample();
  };
}

TrainingTask<MlpPolicy> make_toy_training_task(const EmotionField& field,
                                               const ToyTaskConfig& task_config,
                                               const RewardWeights& weights,
                                               std::uint64_t eval_seed, int eval_timesteps) {
  TrainingTask<MlpPolicy> task;
  task.sample_condition = [field, task_config](Rng& rng) {
    return sample_toy_condition(field, task_config, rng);
  };
  task.reward = [field, weights](const Trajectory& traj) {
    return generator_reward(traj.final_sample(), traj.condition.target, field,
                            traj.condition.anchor, weights)
        .total;
  };
  auto grid = heldout_conditions(field, task_config);
  task.evaluate = [field, grid, task_config, eval_seed, eval_timesteps](const MlpPolicy& policy) {
    const MlpPolicy sampler =
        eval_timesteps > 0 && eval_timesteps != policy.timesteps()
            ? policy.with_timesteps(eval_timesteps)
            : policy;
    auto eval = evaluate_generator(policy_generator(sampler), grid, field,
                                   task_config.eval_group_size, eval_seed);
    return std::make_pair(eval.errors.v_error, eval.errors.a_error);
  };
  return task;
}

}  // namespace emofeed
