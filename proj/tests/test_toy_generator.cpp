#include <cmath>
#include <random>

#include <fmt/format.h>

#include "doctest.h"
#include "support.hpp"

#include "emofeed/toy_generator.hpp"

using namespace emofeed;

namespace {

ConditionEmbedding some_condition(int dim, double v = 6.5, double a = 3.0) {
  Vec anchor = Vec::LinSpaced(dim, -0.3, 0.4);
  return ConditionEmbedding{VAScore(v, a), anchor};
}

/// Log density written out coordinate by coordinate.
double reference_log_density(const Vec& x, const Vec& mean, double sigma) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double z = (x(k) - mean(k)) / sigma;
    total += -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * 3.141592653589793);
  }
  return total;
}

/// G trajectories rolled out by `behavior`, random rewards, normalized.
GroupRollout make_group(const MlpPolicy& behavior, int group_size, std::uint64_t seed) {
  GroupRollout group;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(2.0, 8.0);
  const ConditionEmbedding cond = some_condition(behavior.latent_dim(), u(rng), u(rng));
  for (int i = 0; i < group_size; ++i) {
    group.trajectories.push_back(sample_trajectory(behavior, cond, behavior.timesteps(), rng));
    group.rewards.push_back(u(rng));
  }
  group.advantages = compute_advantages(group.rewards, 1e-8);
  return group;
}

MlpPolicy perturbed(const MlpPolicy& policy, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  MlpParameters noise = policy.params().zeros_like();
  Vec flat = noise.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = normal(rng);
  noise.assign(flat);
  return apply_gradient(policy, noise, 1.0);
}

double relative_error(const Vec& a, const Vec& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("sigma schedule") {
  const Vec s = sigma_schedule(10);
  REQUIRE(s.size() == 10);
  for (int t = 1; t <= 10; ++t) CHECK(s(t - 1) == doctest::Approx(0.5 * t / 10.0 + 0.05));
  CHECK_THROWS_AS(sigma_schedule(0), ValidationError);
}

TEST_CASE("policy shapes and initialization") {
  const MlpPolicy p = MlpPolicy::initialize(2, 32, 10, 4);
  CHECK(p.input_dim() == 7);
  CHECK(p.params().w1.rows() == 32);
  CHECK(p.params().w1.cols() == 7);
  CHECK(p.params().w3.rows() == 2);
  CHECK_NOTHROW(p.validate());
  CHECK(parameter_hash(p) == parameter_hash(MlpPolicy::initialize(2, 32, 10, 4)));
  CHECK(parameter_hash(p) != parameter_hash(MlpPolicy::initialize(2, 32, 10, 5)));
  CHECK_THROWS_AS(MlpPolicy(0, 4, 3), ValidationError);
}

TEST_CASE("zero drift and vanishing noise keep the start state") {
  MlpPolicy p(2, 4, 5);
  p.set_sigmas(Vec::Constant(5, 1e-12));
  Rng rng(1);
  const Trajectory traj = sample_trajectory(p, some_condition(2), 5, rng);
  CHECK((traj.final_sample() - traj.states.front()).norm() < 1e-10);
}

TEST_CASE("sampling is reproducible and records exact densities") {
  const MlpPolicy p = MlpPolicy::initialize(3, 8, 6, 9);
  const ConditionEmbedding cond = some_condition(3);
  Rng a(77), b(77);
  const Trajectory t1 = sample_trajectory(p, cond, 6, a);
  const Trajectory t2 = sample_trajectory(p, cond, 6, b);
  REQUIRE(t1.states.size() == 7);
  REQUIRE(t1.old_log_probs.size() == 6);
  for (std::size_t i = 0; i < t1.states.size(); ++i) CHECK(t1.states[i] == t2.states[i]);
  CHECK(t1.old_log_probs == t2.old_log_probs);

  for (int k = 0; k < 6; ++k) {
    const int t = 6 - k;
    const Vec mean = t1.states[k] + p.drift(t1.states[k], t, cond.encoding());
    CHECK(t1.old_log_probs[k] ==
          doctest::Approx(reference_log_density(t1.states[k + 1], mean, p.sigma(t))).epsilon(1e-12));
  }
  const auto recomputed = recompute_log_probs(p, t1);
  for (int k = 0; k < 6; ++k) CHECK(std::abs(recomputed[k] - t1.old_log_probs[k]) <= 1e-12);

  Rng c(1);
  CHECK_THROWS_AS(sample_trajectory(p, cond, 5, c), ValidationError);
}

TEST_CASE("transition density integrates to one") {
  const MlpPolicy p = MlpPolicy::initialize(1, 6, 4, 2);
  const ConditionEmbedding cond{VAScore(7, 3), Vec::Constant(1, 0.2)};
  for (int t = 1; t <= 4; ++t) {
    const Vec x = Vec::Constant(1, 0.35);
    const Vec mean = x + p.drift(x, t, cond.encoding());
    const double sigma = p.sigma(t);
    const int n = 20001;
    const double lo = mean(0) - 10 * sigma, hi = mean(0) + 10 * sigma;
    const double dx = (hi - lo) / (n - 1);
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      mass += w * std::exp(gaussian_log_density(Vec::Constant(1, lo + i * dx), mean, sigma)) * dx;
    }
    CHECK(std::abs(mass - 1.0) <= 1e-3);
  }
}

TEST_CASE("log-prob response to a bias shift matches the closed form") {
  const MlpPolicy p = MlpPolicy::initialize(2, 8, 4, 3);
  Rng rng(5);
  const Trajectory traj = sample_trajectory(p, some_condition(2), 4, rng);
  const auto before = recompute_log_probs(p, traj);
  for (double delta : {1e-2, 1e-3}) {
    MlpPolicy q = p;
    q.params().b3(0) += delta;
    const auto after = recompute_log_probs(q, traj);
    for (int k = 0; k < 4; ++k) {
      const int t = 4 - k;
      const Vec mean = traj.states[k] + p.drift(traj.states[k], t, traj.condition.encoding());
      const double resid = traj.states[k + 1](0) - mean(0);
      const double s2 = p.sigma(t) * p.sigma(t);
      const double linear = delta * resid / s2;
      CHECK(std::abs((after[k] - before[k]) - linear) <= delta * delta / s2);
    }
  }
}

TEST_CASE("doubling sigma on one step shifts its log-prob by the closed form") {
  const MlpPolicy p = MlpPolicy::initialize(3, 8, 5, 6);
  Rng rng(8);
  const Trajectory traj = sample_trajectory(p, some_condition(3), 5, rng);
  const auto before = recompute_log_probs(p, traj);
  for (int t = 1; t <= 5; ++t) {
    MlpPolicy q = p;
    Vec sig = p.sigmas();
    sig(t - 1) *= 2.0;
    q.set_sigmas(sig);
    const auto after = recompute_log_probs(q, traj);
    const int k = 5 - t;
    const Vec mean = traj.states[k] + p.drift(traj.states[k], t, traj.condition.encoding());
    const double r2 = (traj.states[k + 1] - mean).squaredNorm();
    const double expected = -3.0 * std::log(2.0) + r2 * 3.0 / (8.0 * p.sigma(t) * p.sigma(t));
    CHECK(after[k] - before[k] == doctest::Approx(expected).epsilon(1e-10));
    for (int j = 0; j < 5; ++j) {
      if (j != k) CHECK(after[j] == before[j]);
    }
  }
}

TEST_CASE("gradient is exactly zero with flat advantages and no KL") {
  const MlpPolicy behavior = MlpPolicy::initialize(2, 8, 3, 1);
  GroupRollout group = make_group(behavior, 4, 10);
  std::fill(group.advantages.begin(), group.advantages.end(), 0.0);
  GrpoConfig cfg;
  cfg.kl_beta = 0.0;
  const MlpPolicy current = perturbed(behavior, 0.05, 3);
  CHECK(objective_gradient(current, group, behavior, cfg).flatten().isZero(0.0));
  CHECK(finite_diff_gradient(current, group, behavior, cfg, 1e-5).flatten().isZero(0.0));
}

TEST_CASE("gradient matches central differences on small instances") {
  GrpoConfig cfg;
  cfg.group_size = 4;
  cfg.timesteps = 3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MlpPolicy behavior = MlpPolicy::initialize(2, 8, 3, seed);
    const GroupRollout group = make_group(behavior, 4, mix_seed(seed, 1));
    const MlpPolicy current = perturbed(behavior, 0.02, mix_seed(seed, 2));
    const MlpPolicy reference = perturbed(behavior, 0.02, mix_seed(seed, 3));
    const Vec analytic = objective_gradient(current, group, reference, cfg).flatten();
    const Vec numeric = finite_diff_gradient(current, group, reference, cfg, 1e-5).flatten();
    CAPTURE(seed);
    CHECK(relative_error(analytic, numeric) <= 1e-4);
  }
}

TEST_CASE("central differences converge at second order") {
  GrpoConfig cfg;
  const MlpPolicy behavior = MlpPolicy::initialize(2, 8, 3, 12);
  const GroupRollout group = make_group(behavior, 4, 99);
  const MlpPolicy current = perturbed(behavior, 0.02, 7);
  const Vec analytic = objective_gradient(current, group, behavior, cfg).flatten();
  const double coarse = (finite_diff_gradient(current, group, behavior, cfg, 2e-2).flatten() - analytic).norm();
  const double fine = (finite_diff_gradient(current, group, behavior, cfg, 1e-2).flatten() - analytic).norm();
  CHECK(coarse / fine > 3.0);
  CHECK(coarse / fine < 5.0);
}

TEST_CASE("a fully clipped trajectory contributes no gradient") {
  GrpoConfig cfg;
  cfg.kl_beta = 0.0;
  const MlpPolicy policy = MlpPolicy::initialize(2, 8, 3, 21);
  GroupRollout group = make_group(policy, 2, 5);
  // ratio e on every step of trajectory 0 with a positive advantage;
  // trajectory 1 carries no advantage
  for (double& lp : group.trajectories[0].old_log_probs) lp -= 1.0;
  group.advantages = {1.0, 0.0};
  CHECK(objective_gradient(policy, group, policy, cfg).flatten().isZero(0.0));
  CHECK(finite_diff_gradient(policy, group, policy, cfg, 1e-5).flatten().isZero(0.0));

  // same ratio with a negative advantage takes the unclipped branch
  group.advantages = {-1.0, 0.0};
  CHECK(objective_gradient(policy, group, policy, cfg).flatten().norm() > 0.0);

  GradientStats stats;
  group.advantages = {1.0, 0.0};
  objective_gradient(policy, group, policy, cfg, &stats);
  CHECK(stats.clip_fraction == doctest::Approx(0.5));
}

TEST_CASE("apply_gradient") {
  const MlpPolicy p = MlpPolicy::initialize(2, 8, 3, 2);
  const GroupRollout group = make_group(p, 4, 8);
  GrpoConfig cfg;
  const MlpParameters g = objective_gradient(p, group, p, cfg);

  CHECK(apply_gradient(p, g, 0.0).params() == p.params());
  const MlpPolicy there_and_back = apply_gradient(apply_gradient(p, g, 0.5), g, -0.5);
  CHECK((there_and_back.params().flatten() - p.params().flatten()).cwiseAbs().maxCoeff() <= 1e-15);

  const MlpPolicy current = perturbed(p, 0.01, 4);
  const MlpParameters g2 = objective_gradient(current, group, p, cfg);
  CHECK(objective_value(apply_gradient(current, g2, 1e-6), group, p, cfg) >=
        objective_value(current, group, p, cfg));

  MlpPolicy other(3, 8, 3);
  CHECK_THROWS_AS(apply_gradient(other, g, 1.0), ValidationError);
}

TEST_CASE("weights round-trip through the text format") {
  testsupport::TempDir dir("weights");
  MlpPolicy p = MlpPolicy::initialize(2, 8, 4, 31);
  p = perturbed(p, 1e-3, 2);
  save_weights(p, dir.file("w.txt"));
  const MlpPolicy q = load_weights(dir.file("w.txt"));
  CHECK(q.params() == p.params());
  CHECK(q.sigmas() == p.sigmas());
  CHECK(parameter_hash(q) == parameter_hash(p));
  CHECK(testsupport::slurp(dir.file("w.txt")).rfind("toyflow v1 2 8 4\n", 0) == 0);
}

TEST_CASE("truncated and mismatched weight files are rejected") {
  testsupport::TempDir dir("weights-bad");
  const MlpPolicy p = MlpPolicy::initialize(2, 8, 4, 31);
  save_weights(p, dir.file("w.txt"));
  const std::string text = testsupport::slurp(dir.file("w.txt"));
  const auto payload_line_end = text.find('\n', text.find('\n') + 1);
  const std::size_t payload = text.size() - payload_line_end - 1;

  testsupport::spit(dir.file("cut.txt"), text.substr(0, text.size() - 40));
  try {
    load_weights(dir.file("cut.txt"));
    FAIL("truncated file loaded");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(fmt::format("expected {} payload bytes", payload)) !=
          std::string::npos);
  }

  try {
    load_weights(dir.file("w.txt"), 3);
    FAIL("latent mismatch accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("latent_dim 2 does not match expected 3") != std::string::npos);
  }

  testsupport::spit(dir.file("header.txt"), "weights v9\n");
  CHECK_THROWS_AS(load_weights(dir.file("header.txt")), ValidationError);
  CHECK_THROWS_AS(load_weights(dir.file("missing.txt")), ValidationError);
}
