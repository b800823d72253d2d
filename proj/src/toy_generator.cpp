#include "emofeed/toy_generator.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

namespace emofeed {

MlpParameters MlpParameters::zeros(int input_dim, int hidden_dim, int output_dim) {
  return {Mat::Zero(hidden_dim, input_dim), Vec::Zero(hidden_dim),
          Mat::Zero(hidden_dim, hidden_dim), Vec::Zero(hidden_dim),
          Mat::Zero(output_dim, hidden_dim), Vec::Zero(output_dim)};
}

MlpParameters MlpParameters::zeros_like() const {
  return zeros(static_cast<int>(w1.cols()), static_cast<int>(w1.rows()),
               static_cast<int>(w3.rows()));
}

Eigen::Index MlpParameters::size() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
}

namespace {

template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(p.w1);
  fn(p.b1);
  fn(p.w2);
  fn(p.b2);
  fn(p.w3);
  fn(p.b3);
}

}  // namespace

Vec MlpParameters::flatten() const {
  Vec flat(size());
  Eigen::Index offset = 0;
  for_each_tensor(*this, [&](const auto& t) {
    flat.segment(offset, t.size()) = t.reshaped();
    offset += t.size();
  });
  return flat;
}

void MlpParameters::assign(const Vec& flat) {
  require(flat.size() == size(), "MlpParameters::assign: size mismatch");
  Eigen::Index offset = 0;
  for_each_tensor(*this, [&](auto& t) {
    t.reshaped() = flat.segment(offset, t.size());
    offset += t.size();
  });
}

bool MlpParameters::same_shape(const MlpParameters& o) const {
  return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
         w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size() &&
         w3.rows() == o.w3.rows() && w3.cols() == o.w3.cols() && b3.size() == o.b3.size();
}

bool MlpParameters::all_finite() const {
  bool ok = true;
  for_each_tensor(*this, [&](const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

MlpParameters& MlpParameters::operator+=(const MlpParameters& o) {
  require(same_shape(o), "MlpParameters: shape mismatch");
  w1 += o.w1;
  b1 += o.b1;
  w2 += o.w2;
  b2 += o.b2;
  w3 += o.w3;
  b3 += o.b3;
  return *this;
}

MlpParameters& MlpParameters::operator*=(double factor) {
  for_each_tensor(*this, [&](auto& t) { t *= factor; });
  return *this;
}

bool operator==(const MlpParameters& a, const MlpParameters& b) {
  return a.same_shape(b) && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2 &&
         a.w3 == b.w3 && a.b3 == b.b3;
}

Vec sigma_schedule(int timesteps) {
  require(timesteps >= 1, "sigma_schedule: timesteps must be at least 1");
  Vec sigmas(timesteps);
  for (int t = 1; t <= timesteps; ++t) {
    sigmas(t - 1) = 0.5 * static_cast<double>(t) / timesteps + 0.05;
  }
  return sigmas;
}

MlpPolicy::MlpPolicy(int latent_dim, int hidden_dim, int timesteps)
    : latent_dim_(latent_dim), hidden_dim_(hidden_dim) {
  require(latent_dim >= 1 && hidden_dim >= 1, "MlpPolicy: dimensions must be positive");
  params_ = MlpParameters::zeros(input_dim(), hidden_dim, latent_dim);
  sigmas_ = sigma_schedule(timesteps);
}

MlpPolicy MlpPolicy::initialize(int latent_dim, int hidden_dim, int timesteps,
                                std::uint64_t seed) {
  MlpPolicy policy(latent_dim, hidden_dim, timesteps);
  Rng rng(mix_seed(seed, 0x706f6c696379ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Mat& m, double scale) {
    m = m.unaryExpr([&](double) { return scale * normal(rng); });
  };
  auto& p = policy.params_;
  fill(p.w1, 1.0 / std::sqrt(static_cast<double>(policy.input_dim())));
  fill(p.w2, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  fill(p.w3, 0.1 / std::sqrt(static_cast<double>(hidden_dim)));
  return policy;
}

void MlpPolicy::set_sigmas(Vec sigmas) {
  require(sigmas.size() >= 1 && (sigmas.array() > 0.0).all() && sigmas.allFinite(),
          "MlpPolicy: noise scales must be positive and finite");
  sigmas_ = std::move(sigmas);
}

MlpPolicy MlpPolicy::with_timesteps(int timesteps) const {
  MlpPolicy copy = *this;
  copy.sigmas_ = sigma_schedule(timesteps);
  return copy;
}

Vec MlpPolicy::input(const Vec& state, int t, const Vec& condition_encoding) const {
  require(state.size() == latent_dim_, "MlpPolicy: state dimension mismatch");
  require(condition_encoding.size() == latent_dim_ + 2,
          "MlpPolicy: condition encoding dimension mismatch");
  Vec z(input_dim());
  z << state, static_cast<double>(t) / timesteps(), condition_encoding;
  return z;
}

Vec MlpPolicy::drift(const Vec& state, int t, const Vec& condition_encoding) const {
  return drift_batch(input(state, t, condition_encoding));
}

Mat MlpPolicy::drift_batch(const Mat& inputs) const {
  const auto& p = params_;
  Mat h1 = ((p.w1 * inputs).colwise() + p.b1).array().tanh().matrix();
  Mat h2 = ((p.w2 * h1).colwise() + p.b2).array().tanh().matrix();
  return (p.w3 * h2).colwise() + p.b3;
}

void MlpPolicy::validate() const {
  require(params_.same_shape(MlpParameters::zeros(input_dim(), hidden_dim_, latent_dim_)),
          "MlpPolicy: layer shapes are inconsistent");
  require(params_.all_finite(), "MlpPolicy: non-finite parameter");
  require((sigmas_.array() > 0.0).all(), "MlpPolicy: noise scales must be positive");
}

Trajectory sample_trajectory(const MlpPolicy& policy, const ConditionEmbedding& condition,
                             int timesteps, Rng& rng) {
  require(timesteps >= 1, "sample_trajectory: timesteps must be at least 1");
  require(timesteps == policy.timesteps(),
          fmt::format("sample_trajectory: policy noise schedule has {} steps, asked for {}",
                      policy.timesteps(), timesteps));
  require(condition.anchor.size() == policy.latent_dim(),
          "sample_trajectory: anchor dimension mismatch");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = policy.latent_dim();
  const Vec encoding = condition.encoding();

  Trajectory traj;
  traj.condition = condition;
  traj.states.reserve(timesteps + 1);
  traj.old_log_probs.reserve(timesteps);
  traj.states.push_back(Vec::NullaryExpr(d, [&] { return normal(rng); }));
  for (int t = timesteps; t >= 1; --t) {
    const Vec& x = traj.states.back();
    const Vec mean = x + policy.drift(x, t, encoding);
    if (!mean.allFinite()) {
      throw NumericError(fmt::format("sample_trajectory: non-finite drift at step t={}", t));
    }
    const double sigma = policy.sigma(t);
    Vec next = mean + sigma * Vec::NullaryExpr(d, [&] { return normal(rng); });
    traj.old_log_probs.push_back(gaussian_log_density(next, mean, sigma));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

std::vector<double> recompute_log_probs(const MlpPolicy& policy, const Trajectory& trajectory) {
  const int steps = trajectory.timesteps();
  require(steps == policy.timesteps(), "recompute_log_probs: timestep count mismatch");
  const Vec encoding = trajectory.condition.encoding();
  std::vector<double> out;
  out.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    const int t = steps - k;
    const Vec& x = trajectory.states[k];
    require(x.size() == policy.latent_dim(), "recompute_log_probs: state dimension mismatch");
    const Vec mean = x + policy.drift(x, t, encoding);
    out.push_back(gaussian_log_density(trajectory.states[k + 1], mean, policy.sigma(t)));
  }
  return out;
}

std::vector<double> step_kl_terms(const MlpPolicy& policy, const MlpPolicy& reference,
                                  const Trajectory& trajectory) {
  const int steps = trajectory.timesteps();
  require(steps == policy.timesteps() && steps == reference.timesteps(),
          "step_kl_terms: timestep count mismatch");
  const Vec encoding = trajectory.condition.encoding();
  std::vector<double> out;
  out.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    const int t = steps - k;
    const Vec& x = trajectory.states[k];
    out.push_back(gaussian_step_kl(x + policy.drift(x, t, encoding),
                                   x + reference.drift(x, t, encoding), policy.sigma(t)));
  }
  return out;
}

double objective_value(const MlpPolicy& policy, const GroupRollout& group,
                       const MlpPolicy& reference, const GrpoConfig& config) {
  StepTable log_probs;
  StepTable kl;
  for (const auto& traj : group.trajectories) {
    log_probs.push_back(recompute_log_probs(policy, traj));
    kl.push_back(step_kl_terms(policy, reference, traj));
  }
  return grpo_objective(group, log_probs, kl, config);
}

MlpParameters objective_gradient(const MlpPolicy& policy, const GroupRollout& group,
                                 const MlpPolicy& reference, const GrpoConfig& config,
                                 GradientStats* stats) {
  group.validate();
  require(policy.params().same_shape(reference.params()),
          "objective_gradient: reference policy has a different shape");
  const int g = group.size();
  const int steps = policy.timesteps();
  const int d = policy.latent_dim();
  for (const auto& traj : group.trajectories) {
    require(traj.timesteps() == steps, "objective_gradient: trajectory length mismatch");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(g) * steps;

  Mat inputs(policy.input_dim(), n);
  for (int i = 0; i < g; ++i) {
    const auto& traj = group.trajectories[i];
    const Vec encoding = traj.condition.encoding();
    for (int k = 0; k < steps; ++k) {
      inputs.col(static_cast<Eigen::Index>(i) * steps + k) =
          policy.input(traj.states[k], steps - k, encoding);
    }
  }

  const auto& p = policy.params();
  const Mat h1 = ((p.w1 * inputs).colwise() + p.b1).array().tanh().matrix();
  const Mat h2 = ((p.w2 * h1).colwise() + p.b2).array().tanh().matrix();
  const Mat drift = (p.w3 * h2).colwise() + p.b3;
  const Mat drift_ref = reference.drift_batch(inputs);

  // d objective / d drift, one column per transition.
  Mat d_drift(d, n);
  const double scale = 1.0 / static_cast<double>(n);
  double objective = 0.0;
  double kl_sum = 0.0;
  double ratio_sum = 0.0;
  int clipped = 0;
  for (int i = 0; i < g; ++i) {
    const auto& traj = group.trajectories[i];
    const double advantage = group.advantages[i];
    for (int k = 0; k < steps; ++k) {
      const Eigen::Index col = static_cast<Eigen::Index>(i) * steps + k;
      const int t = steps - k;
      const double sigma = policy.sigma(t);
      const double var = sigma * sigma;
      const Vec mean = traj.states[k] + drift.col(col);
      const Vec resid = traj.states[k + 1] - mean;
      const double log_prob = gaussian_log_density(traj.states[k + 1], mean, sigma);
      const auto ratio = importance_ratio(log_prob, traj.old_log_probs[k], config.ratio_ceiling);
      const double slope =
          ratio.capped ? 0.0 : clipped_surrogate_slope(ratio.value, advantage, config.clip_epsilon);
      const Vec drift_gap = drift.col(col) - drift_ref.col(col);
      const double kl = drift_gap.squaredNorm() / (2.0 * var);

      d_drift.col(col) = scale * (slope * ratio.value * resid - config.kl_beta * drift_gap) / var;

      objective += clipped_surrogate(ratio.value, advantage, config.clip_epsilon) -
                   config.kl_beta * kl;
      kl_sum += kl;
      ratio_sum += ratio.value;
      if (std::abs(ratio.value - 1.0) > config.clip_epsilon) ++clipped;
    }
  }
  if (!d_drift.allFinite()) {
    throw NumericError("objective_gradient: non-finite output gradient");
  }

  MlpParameters grad = p.zeros_like();
  grad.w3 = d_drift * h2.transpose();
  grad.b3 = d_drift.rowwise().sum();
  const Mat d_a2 = ((p.w3.transpose() * d_drift).array() * (1.0 - h2.array().square())).matrix();
  grad.w2 = d_a2 * h1.transpose();
  grad.b2 = d_a2.rowwise().sum();
  const Mat d_a1 = ((p.w2.transpose() * d_a2).array() * (1.0 - h1.array().square())).matrix();
  grad.w1 = d_a1 * inputs.transpose();
  grad.b1 = d_a1.rowwise().sum();
  if (!grad.all_finite()) throw NumericError("objective_gradient: non-finite weight gradient");

  if (stats) {
    stats->objective = objective * scale;
    stats->mean_kl = kl_sum * scale;
    stats->mean_ratio = ratio_sum * scale;
    stats->clip_fraction = clipped * scale;
  }
  return grad;
}

MlpParameters finite_diff_gradient(const MlpPolicy& policy, const GroupRollout& group,
                                   const MlpPolicy& reference, const GrpoConfig& config,
                                   double step) {
  require(step > 0.0, "finite_diff_gradient: step must be positive");
  const Vec theta = policy.params().flatten();
  Vec estimate(theta.size());
  MlpPolicy probe = policy;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    Vec shifted = theta;
    shifted(j) = theta(j) + step;
    probe.params().assign(shifted);
    const double up = objective_value(probe, group, reference, config);
    shifted(j) = theta(j) - step;
    probe.params().assign(shifted);
    const double down = objective_value(probe, group, reference, config);
    estimate(j) = (up - down) / (2.0 * step);
  }
  MlpParameters out = policy.params().zeros_like();
  out.assign(estimate);
  return out;
}

MlpPolicy apply_gradient(const MlpPolicy& policy, const MlpParameters& gradient,
                         double learning_rate) {
  require(policy.params().same_shape(gradient), "apply_gradient: shape mismatch");
  MlpPolicy updated = policy;
  MlpParameters step = gradient;
  step *= learning_rate;
  updated.params() += step;
  return updated;
}

std::uint64_t parameter_hash(const MlpPolicy& policy) {
  const Vec flat = policy.params().flatten();
  std::uint64_t h = fnv1a(flat.data(), sizeof(double) * static_cast<std::size_t>(flat.size()));
  return fnv1a(policy.sigmas().data(),
               sizeof(double) * static_cast<std::size_t>(policy.sigmas().size()), h);
}

namespace {

template <typename Tensor>
void write_tensor(std::string& out, std::string_view name, const Tensor& t) {
  out += fmt::format("{} {} {}\n", name, t.rows(), t.cols());
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      if (c > 0) out += ' ';
      out += fmt::format("{:.17g}", t(r, c));
    }
    out += '\n';
  }
}

template <typename Tensor>
void read_tensor(std::istream& in, std::string_view name, Tensor& t) {
  std::string got;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  if (!(in >> got >> rows >> cols) || got != name) {
    throw ValidationError(fmt::format("weight file: expected section '{}'", name));
  }
  if (rows != t.rows() || cols != t.cols()) {
    throw ValidationError(fmt::format("weight file: section '{}' is {}x{}, header implies {}x{}",
                                      name, rows, cols, t.rows(), t.cols()));
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> t(r, c))) {
        throw ValidationError(fmt::format("weight file: section '{}' is incomplete", name));
      }
    }
  }
}

}  // namespace

void save_weights(const MlpPolicy& policy, const std::string& path) {
  policy.validate();
  std::string body;
  const auto& p = policy.params();
  write_tensor(body, "w1", p.w1);
  write_tensor(body, "b1", p.b1);
  write_tensor(body, "w2", p.w2);
  write_tensor(body, "b2", p.b2);
  write_tensor(body, "w3", p.w3);
  write_tensor(body, "b3", p.b3);
  write_tensor(body, "sigma", policy.sigmas());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError(fmt::format("cannot write weight file '{}'", path));
  out << fmt::format("toyflow v1 {} {} {}\n", policy.latent_dim(), policy.hidden_dim(),
                     policy.timesteps())
      << fmt::format("payload {}\n", body.size()) << body;
  if (!out) throw ValidationError(fmt::format("failed writing weight file '{}'", path));
}

MlpPolicy load_weights(const std::string& path, std::optional<int> expected_latent_dim) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ValidationError(fmt::format("cannot read weight file '{}'", path));
  std::string header;
  std::string payload_line;
  std::getline(file, header);
  std::getline(file, payload_line);

  std::istringstream hs(header);
  std::string magic;
  std::string version;
  int latent_dim = 0;
  int hidden_dim = 0;
  int timesteps = 0;
  if (!(hs >> magic >> version >> latent_dim >> hidden_dim >> timesteps) || magic != "toyflow" ||
      version != "v1" || latent_dim < 1 || hidden_dim < 1 || timesteps < 1) {
    throw ValidationError(fmt::format("weight file '{}': malformed header '{}'", path, header));
  }
  if (expected_latent_dim && *expected_latent_dim != latent_dim) {
    throw ValidationError(fmt::format("weight file '{}': latent_dim {} does not match expected {}",
                                      path, latent_dim, *expected_latent_dim));
  }
  std::istringstream ps(payload_line);
  std::string tag;
  std::size_t expected_bytes = 0;
  if (!(ps >> tag >> expected_bytes) || tag != "payload") {
    throw ValidationError(fmt::format("weight file '{}': missing payload line", path));
  }
  std::string body{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
  if (body.size() != expected_bytes) {
    throw ValidationError(fmt::format("weight file '{}' truncated: expected {} payload bytes, found {}",
                                      path, expected_bytes, body.size()));
  }

  MlpPolicy policy(latent_dim, hidden_dim, timesteps);
  std::istringstream in(body);
  auto& p = policy.params();
  read_tensor(in, "w1", p.w1);
  read_tensor(in, "b1", p.b1);
  read_tensor(in, "w2", p.w2);
  read_tensor(in, "b2", p.b2);
  read_tensor(in, "w3", p.w3);
  read_tensor(in, "b3", p.b3);
  Vec sigmas(timesteps);
  read_tensor(in, "sigma", sigmas);
  policy.set_sigmas(std::move(sigmas));
  policy.validate();
  return policy;
}

}  // namespace emofeed
