#include "emofeed/grpo.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace emofeed {

void Trajectory::validate() const {
  require(!old_log_probs.empty(), "trajectory has no transitions");
  require(states.size() == old_log_probs.size() + 1,
          fmt::format("trajectory has {} states for {} transitions", states.size(),
                      old_log_probs.size()));
  for (const auto& state : states) {
    require(state.allFinite(), "trajectory state is not finite");
  }
  for (double lp : old_log_probs) require(std::isfinite(lp), "trajectory log-prob is not finite");
}

void GroupRollout::validate() const {
  require(trajectories.size() >= 2, "a group needs at least two trajectories");
  require(rewards.size() == trajectories.size() && advantages.size() == trajectories.size(),
          "group trajectories, rewards and advantages differ in length");
}

void GrpoConfig::validate() const {
  require(group_size >= 2, "group_size must be at least 2");
  require(timesteps >= 1 && eval_timesteps >= 1, "timesteps must be at least 1");
  require(clip_epsilon > 0.0 && clip_epsilon < 1.0, "clip_epsilon must lie in (0, 1)");
  require(kl_beta >= 0.0, "kl_beta must be nonnegative");
  require(steps >= 0, "steps must be nonnegative");
  require(batch_groups >= 1, "batch_groups must be at least 1");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be >= 0");
  require(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0,
          "final_lr_fraction must lie in [0, 1]");
  require(std_floor > 0.0, "std_floor must be positive");
  require(ratio_ceiling > 1.0, "ratio_ceiling must exceed 1");
}

double GrpoConfig::learning_rate_at(int step) const {
  if (steps <= 1) return learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(steps - 1);
  return learning_rate * (1.0 - (1.0 - final_lr_fraction) * progress);
}

std::vector<double> compute_advantages(std::span<const double> rewards, double std_floor,
                                       StdMode mode) {
  require(rewards.size() >= 2, "compute_advantages: need at least two rewards");
  Eigen::Map<const Vec> r(rewards.data(), static_cast<Eigen::Index>(rewards.size()));
  require(r.allFinite(), "compute_advantages: non-finite reward");
  const double mean = r.mean();
  const double denom = mode == StdMode::kPopulation ? static_cast<double>(r.size())
                                                    : static_cast<double>(r.size() - 1);
  const double std = std::sqrt((r.array() - mean).square().sum() / denom);
  std::vector<double> out(rewards.size(), 0.0);
  if (std < std_floor) return out;
  Eigen::Map<Vec>(out.data(), r.size()) = (r.array() - mean) / std;
  return out;
}

ImportanceRatio importance_ratio(double new_log_prob, double old_log_prob, double ceiling) {
  if (!std::isfinite(new_log_prob) || !std::isfinite(old_log_prob)) {
    throw NumericError("importance_ratio: non-finite log-probability");
  }
  const double log_ratio = new_log_prob - old_log_prob;
  if (log_ratio >= std::log(ceiling)) return {ceiling, true};
  return {std::exp(log_ratio), false};
}

double clipped_surrogate(double ratio, double advantage, double clip_epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_surrogate_slope(double ratio, double advantage, double clip_epsilon) {
  const double lo = 1.0 - clip_epsilon;
  const double hi = 1.0 + clip_epsilon;
  if (ratio > lo && ratio < hi) return advantage;
  const double clipped = std::clamp(ratio, lo, hi);
  return ratio * advantage < clipped * advantage ? advantage : 0.0;
}

double grpo_objective(const GroupRollout& group, const StepTable& new_log_probs,
                      const StepTable& kl_terms, const GrpoConfig& config) {
  group.validate();
  const auto g = group.trajectories.size();
  require(new_log_probs.size() == g && kl_terms.size() == g,
          "grpo_objective: per-trajectory tables do not match the group size");
  double total = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const auto& old = group.trajectories[i].old_log_probs;
    const std::size_t t_len = old.size();
    require(new_log_probs[i].size() == t_len && kl_terms[i].size() == t_len,
            fmt::format("grpo_objective: trajectory {} step tables have the wrong length", i));
    double inner = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const auto ratio = importance_ratio(new_log_probs[i][t], old[t], config.ratio_ceiling);
      inner += clipped_surrogate(ratio.value, group.advantages[i], config.clip_epsilon) -
               config.kl_beta * kl_terms[i][t];
    }
    total += inner / static_cast<double>(t_len);
  }
  return total / static_cast<double>(g);
}

}  // namespace emofeed
