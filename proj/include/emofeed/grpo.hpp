#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "emofeed/condition.hpp"

namespace emofeed {

/// A denoising path. states[0] is x_T and states[T] is x_0; old_log_probs[k]
/// is the log-density of the transition states[k] -> states[k+1] under the
/// behavior policy.
struct Trajectory {
  std::vector<Vec> states;
  std::vector<double> old_log_probs;
  ConditionEmbedding condition;

  int timesteps() const { return static_cast<int>(old_log_probs.size()); }
  const Vec& final_sample() const { return states.back(); }
  void validate() const;
};

struct GroupRollout {
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;

  int size() const { return static_cast<int>(trajectories.size()); }
  void validate() const;
};

enum class StdMode { kPopulation, kSample };

struct GrpoConfig {
  int group_size = 8;
  int timesteps = 10;
  int eval_timesteps = 10;
  double clip_epsilon = 0.2;
  double kl_beta = 0.1;
  int steps = 1000;
  int batch_groups = 16;
  double learning_rate = 1e-4;
  /// Learning rate decays linearly to learning_rate * final_lr_fraction.
  double final_lr_fraction = 0.1;
  double std_floor = 1e-8;
  StdMode std_mode = StdMode::kPopulation;
  double ratio_ceiling = 1e6;

  void validate() const;
  double learning_rate_at(int step) const;
};

/// (R - mean) / std within the group; a group whose std falls below
/// std_floor gets all-zero advantages.
std::vector<double> compute_advantages(std::span<const double> rewards, double std_floor,
                                       StdMode mode = StdMode::kPopulation);

struct ImportanceRatio {
  double value = 1.0;
  bool capped = false;
};

/// exp(new - old), capped at `ceiling`.
ImportanceRatio importance_ratio(double new_log_prob, double old_log_prob,
                                 double ceiling = 1e6);

/// min(r * A, clip(r, 1 - eps, 1 + eps) * A).
double clipped_surrogate(double ratio, double advantage, double clip_epsilon);

/// d clipped_surrogate / d ratio. Zero wherever the clipped branch is active,
/// including the band edges.
double clipped_surrogate_slope(double ratio, double advantage, double clip_epsilon);

/// KL between N(mean_new, sigma^2 I) and N(mean_ref, sigma^2 I).
template <typename DerivedA, typename DerivedB>
double gaussian_step_kl(const Eigen::MatrixBase<DerivedA>& mean_new,
                        const Eigen::MatrixBase<DerivedB>& mean_ref, double sigma) {
  require(sigma > 0.0, "gaussian_step_kl: sigma must be positive");
  require(mean_new.size() == mean_ref.size(), "gaussian_step_kl: dimension mismatch");
  return (mean_new - mean_ref).squaredNorm() / (2.0 * sigma * sigma);
}

/// Per-trajectory, per-step reals.
using StepTable = std::vector<std::vector<double>>;

/// (1/G) sum_i (1/T) sum_t [clipped_surrogate(exp(new - old), A_i) - beta * kl].
/// This is the quantity to maximize.
double grpo_objective(const GroupRollout& group, const StepTable& new_log_probs,
                      const StepTable& kl_terms, const GrpoConfig& config);

}  // namespace emofeed
