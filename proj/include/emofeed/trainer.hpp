#pragma once

#include <concepts>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <fmt/format.h>

#include "emofeed/grpo.hpp"

namespace emofeed {

/// Diagnostics gathered while differentiating the objective.
struct GradientStats {
  double objective = 0.0;
  double mean_kl = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

/// What train_loop needs from a policy: rollouts, an objective gradient with
/// a flattenable parameter-shaped result, and an ascent step.
template <typename Policy>
concept GrpoPolicy = requires(const Policy& policy, const ConditionEmbedding& condition,
                              Rng& rng, const GroupRollout& group, const GrpoConfig& config,
                              GradientStats* stats) {
  { sample_trajectory(policy, condition, policy.timesteps(), rng) } -> std::same_as<Trajectory>;
  { objective_gradient(policy, group, policy, config, stats).flatten() } -> std::convertible_to<Vec>;
  { policy.params().zeros_like() } -> std::same_as<decltype(objective_gradient(policy, group, policy, config, stats))>;
  { policy.params().size() } -> std::convertible_to<Eigen::Index>;
  { apply_gradient(policy, objective_gradient(policy, group, policy, config, stats), 1.0) }
      -> std::same_as<Policy>;
};

enum class OptimizerKind { kAdam, kSgd };

struct TrainerOptions {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  /// Rollout groups of one step are split into this many sequential
  /// updates; later updates see ratios away from 1.
  int minibatches = 4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int eval_interval = 50;
};

struct TrainLogEntry {
  int step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::optional<double> v_error;
  std::optional<double> a_error;
};

/// step,mean_reward,mean_kl,clip_fraction,v_error,a_error; the error
/// columns are empty on steps without an evaluation.
inline std::string format_log_line(const TrainLogEntry& e) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.6f}", *v) : std::string();
  };
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{},{}", e.step, e.mean_reward, e.mean_kl,
                     e.clip_fraction, opt(e.v_error), opt(e.a_error));
}

inline constexpr const char* kTrainLogHeader = "step,mean_reward,mean_kl,clip_fraction,v_error,a_error";

template <typename Policy>
struct TrainResult {
  Policy policy;
  std::vector<TrainLogEntry> log;
};

template <typename Policy>
struct TrainingTask {
  std::function<ConditionEmbedding(Rng&)> sample_condition;
  std::function<double(const Trajectory&)> reward;
  /// Optional held-out evaluation returning (v_error, a_error).
  std::function<std::pair<double, double>(const Policy&)> evaluate;
  /// Called after every step with the updated policy.
  std::function<void(const TrainLogEntry&, const Policy&)> on_step;
};

class Adam {
 public:
  Adam(Eigen::Index size, double beta1, double beta2, double epsilon)
      : m_(Vec::Zero(size)), v_(Vec::Zero(size)), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  /// Bias-corrected ascent direction for the gradient `g`.
  Vec direction(const Vec& g) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * g;
    v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    return ((m_ / c1).array() / ((v_ / c2).array().sqrt() + eps_)).matrix();
  }

 private:
  Vec m_;
  Vec v_;
  double beta1_;
  double beta2_;
  double eps_;
  int t_ = 0;
};

/// Rolls out one group of `group_size` trajectories for a condition and
/// fills rewards and normalized advantages.
template <GrpoPolicy Policy>
GroupRollout rollout_group(const Policy& policy, const ConditionEmbedding& condition,
                           const TrainingTask<Policy>& task, const GrpoConfig& config,
                           std::uint64_t seed) {
  GroupRollout group;
  for (int i = 0; i < config.group_size; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    group.trajectories.push_back(sample_trajectory(policy, condition, policy.timesteps(), rng));
    group.rewards.push_back(task.reward(group.trajectories.back()));
  }
  group.advantages = compute_advantages(group.rewards, config.std_floor, config.std_mode);
  return group;
}

/// GRPO training. The reference policy is the policy at entry. Every random
/// draw derives from `seed`, so identical inputs give identical logs.
template <GrpoPolicy Policy>
TrainResult<Policy> train_loop(Policy policy, const TrainingTask<Policy>& task,
                               const GrpoConfig& config, const TrainerOptions& options,
                               std::uint64_t seed) {
  config.validate();
  require(options.minibatches >= 1 && options.minibatches <= config.batch_groups,
          "minibatches must lie in [1, batch_groups]");
  const Policy reference = policy;
  Adam adam(policy.params().size(), options.adam_beta1, options.adam_beta2,
            options.adam_epsilon);
  TrainResult<Policy> result{policy, {}};

  for (int step = 0; step < config.steps; ++step) {
    TrainLogEntry entry;
    entry.step = step;
    if (task.evaluate && options.eval_interval > 0 &&
        (step % options.eval_interval == 0 || step + 1 == config.steps)) {
      auto [v, a] = task.evaluate(result.policy);
      entry.v_error = v;
      entry.a_error = a;
    }

    const std::uint64_t step_seed = mix_seed(seed, static_cast<std::uint64_t>(step));
    std::vector<GroupRollout> groups;
    groups.reserve(config.batch_groups);
    double reward_sum = 0.0;
    for (int b = 0; b < config.batch_groups; ++b) {
      const std::uint64_t group_seed = mix_seed(step_seed, static_cast<std::uint64_t>(b));
      Rng condition_rng(group_seed);
      const ConditionEmbedding condition = task.sample_condition(condition_rng);
      groups.push_back(
          rollout_group(result.policy, condition, task, config, mix_seed(group_seed, 1)));
      for (double r : groups.back().rewards) reward_sum += r;
    }
    entry.mean_reward = reward_sum / (config.batch_groups * config.group_size);

    const double lr = config.learning_rate_at(step);
    const int per_batch = config.batch_groups / options.minibatches;
    int begin = 0;
    for (int mb = 0; mb < options.minibatches; ++mb) {
      const int end = mb + 1 == options.minibatches ? config.batch_groups : begin + per_batch;
      auto grad = result.policy.params().zeros_like();
      for (int b = begin; b < end; ++b) {
        GradientStats stats;
        grad += objective_gradient(result.policy, groups[b], reference, config, &stats);
        entry.mean_kl += stats.mean_kl;
        entry.mean_ratio += stats.mean_ratio;
        entry.clip_fraction += stats.clip_fraction;
      }
      grad *= 1.0 / static_cast<double>(end - begin);
      Vec flat = grad.flatten();
      if (!flat.allFinite()) {
        throw NumericError(fmt::format("non-finite gradient at step {}", step));
      }
      if (options.optimizer == OptimizerKind::kAdam) {
        grad.assign(adam.direction(flat));
      }
      result.policy = apply_gradient(result.policy, grad, lr);
      begin = end;
    }
    entry.mean_kl /= config.batch_groups;
    entry.mean_ratio /= config.batch_groups;
    entry.clip_fraction /= config.batch_groups;
    result.log.push_back(entry);
    if (task.on_step) task.on_step(entry, result.policy);
  }
  return result;
}

}  // namespace emofeed
