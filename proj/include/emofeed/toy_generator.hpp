#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emofeed/grpo.hpp"
#include "emofeed/trainer.hpp"

namespace emofeed {

/// Weights of the drift network: two tanh hidden layers and a linear output.
struct MlpParameters {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
  Mat w3;
  Vec b3;

  static MlpParameters zeros(int input_dim, int hidden_dim, int output_dim);
  MlpParameters zeros_like() const;

  Eigen::Index size() const;
  Vec flatten() const;
  void assign(const Vec& flat);
  bool same_shape(const MlpParameters& other) const;
  bool all_finite() const;

  MlpParameters& operator+=(const MlpParameters& other);
  MlpParameters& operator*=(double factor);
  friend bool operator==(const MlpParameters& a, const MlpParameters& b);
};

/// Fixed transition noise: sigma_t = 0.5 * t / T + 0.05 for t = 1..T,
/// stored at index t - 1.
Vec sigma_schedule(int timesteps);

/// Conditional drift network for the toy denoiser. A transition from x_t is
/// x_{t-1} ~ N(x_t + drift(x_t, t/T, c), sigma_t^2 I).
class MlpPolicy {
 public:
  MlpPolicy() = default;
  MlpPolicy(int latent_dim, int hidden_dim, int timesteps);

  /// Random initialization with a small output layer.
  static MlpPolicy initialize(int latent_dim, int hidden_dim, int timesteps,
                              std::uint64_t seed);

  int latent_dim() const { return latent_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int input_dim() const { return 2 * latent_dim_ + 3; }
  int timesteps() const { return static_cast<int>(sigmas_.size()); }

  const MlpParameters& params() const { return params_; }
  MlpParameters& params() { return params_; }
  /// sigma for timestep t in 1..T.
  double sigma(int t) const { return sigmas_(t - 1); }
  const Vec& sigmas() const { return sigmas_; }
  void set_sigmas(Vec sigmas);

  /// Same weights, default noise schedule for a different step count.
  MlpPolicy with_timesteps(int timesteps) const;

  /// Network input for one transition.
  Vec input(const Vec& state, int t, const Vec& condition_encoding) const;
  Vec drift(const Vec& state, int t, const Vec& condition_encoding) const;
  /// Column-wise drift for a matrix of inputs.
  Mat drift_batch(const Mat& inputs) const;

  void validate() const;

 private:
  int latent_dim_ = 0;
  int hidden_dim_ = 0;
  MlpParameters params_;
  Vec sigmas_;
};

/// log N(x; mean, sigma^2 I).
template <typename DerivedA, typename DerivedB>
double gaussian_log_density(const Eigen::MatrixBase<DerivedA>& x,
                            const Eigen::MatrixBase<DerivedB>& mean, double sigma) {
  const double d = static_cast<double>(x.size());
  const double var = sigma * sigma;
  return -0.5 * d * std::log(2.0 * M_PI * var) - (x - mean).squaredNorm() / (2.0 * var);
}

/// Rolls out T = policy.timesteps() denoising steps from x_T ~ N(0, I).
Trajectory sample_trajectory(const MlpPolicy& policy, const ConditionEmbedding& condition,
                             int timesteps, Rng& rng);

/// Transition log-densities of the recorded states under `policy`.
std::vector<double> recompute_log_probs(const MlpPolicy& policy, const Trajectory& trajectory);

/// Per-step KL to the reference policy at the visited states.
std::vector<double> step_kl_terms(const MlpPolicy& policy, const MlpPolicy& reference,
                                  const Trajectory& trajectory);

/// grpo_objective evaluated with log-probs and KL terms recomputed under
/// `policy`.
double objective_value(const MlpPolicy& policy, const GroupRollout& group,
                       const MlpPolicy& reference, const GrpoConfig& config);

/// Exact reverse-mode gradient of objective_value with respect to the
/// policy weights. Recorded states and old log-probs are constants.
MlpParameters objective_gradient(const MlpPolicy& policy, const GroupRollout& group,
                                 const MlpPolicy& reference, const GrpoConfig& config,
                                 GradientStats* stats = nullptr);

/// Central differences of objective_value, one weight at a time.
MlpParameters finite_diff_gradient(const MlpPolicy& policy, const GroupRollout& group,
                                   const MlpPolicy& reference, const GrpoConfig& config,
                                   double step);

/// theta + learning_rate * gradient.
MlpPolicy apply_gradient(const MlpPolicy& policy, const MlpParameters& gradient,
                         double learning_rate);

/// FNV-1a over the raw weight and noise bytes.
std::uint64_t parameter_hash(const MlpPolicy& policy);

/// Plain-text weight file:
///   toyflow v1 <latent_dim> <hidden_dim> <T>
///   payload <bytes>
///   <name> <rows> <cols>
///   <row values...>
/// for w1 b1 w2 b2 w3 b3 sigma.
void save_weights(const MlpPolicy& policy, const std::string& path);
MlpPolicy load_weights(const std::string& path,
                       std::optional<int> expected_latent_dim = std::nullopt);

}  // namespace emofeed
