#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

#include "affkit/cem.hpp"
#include "affkit/env.hpp"
#include "affkit/kinematics.hpp"
#include "affkit/policy.hpp"
#include "affkit/rng.hpp"
#include "doctest.h"

using namespace affkit;

namespace {

KeypointDistribution space3(const Vec3& mean, double variance) {
  return KeypointDistribution::isotropic(mean, variance);
}

// Covariance oracle: per-entry scalar loops, no matrix algebra shared with
// the implementation.
MatX oracle_covariance(const std::vector<VecX>& elites) {
  const auto d = elites.front().size();
  const auto k = static_cast<double>(elites.size());
  VecX mean = VecX::Zero(d);
  for (const VecX& x : elites)
    for (Eigen::Index a = 0; a < d; ++a) mean(a) += x(a) / k;
  MatX cov = MatX::Zero(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b)
      for (const VecX& x : elites)
        cov(a, b) += (x(a) - mean(a)) * (x(b) - mean(b)) / k;
  return cov;
}

// Noiseless concave landscape peaked at x*.
CandidateScorer synthetic_landscape(const Vec3& x_star) {
  return [x_star](const VecX& candidate, uint64_t) {
    CandidateEvaluation eval;
    eval.candidate = candidate;
    const double r =
        1.0 - std::min(1.0, (Vec3(candidate.head(3)) - x_star).norm());
    eval.returns = {r};
    eval.average_return = r;
    return eval;
  };
}

KinematicChain two_link() {
  std::vector<LinkSpec> links;
  links.push_back({0.30, Vec3::UnitZ(), -kPi, kPi, 2.0});
  links.push_back({0.25, Vec3::UnitZ(), -2.8, 2.8, 2.0});
  return KinematicChain(links, Pose{});
}

Scene reach_scene() {
  KinematicChain chain = two_link();
  JointVector home(2);
  home << 0.3, 0.8;
  const Vec3 point(0.35, 0.20, 0.0);
  return Scene(chain, ArticulatedObject{}, TaskKind::non_grasping, point,
               point, Quat::Identity(), 0.04, home, 30);
}

PolicyParams frozen_policy(const Scene& scene, uint64_t seed) {
  PolicyConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.embed = 16;
  cfg.ff = 32;
  cfg.actor_hidden = 16;
  cfg.critic_hidden = 16;
  cfg.dof = scene.chain.dof();
  cfg.action_bound = scene.chain.step_bound();
  return init_policy(cfg, seed);
}

}  // namespace

TEST_CASE("cem config validation") {
  CemConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  CemConfig bad = cfg;
  bad.sample_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.elite_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.elite_size = cfg.sample_size + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.rollouts = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.max_iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.sigma_threshold = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.jitter = -1e-9;
  try {
    bad.validate();
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(e.field_path() == "cem.jitter");
  }
}

TEST_CASE("keypoint distribution validation") {
  KeypointDistribution space = space3(Vec3(0.1, 0.2, 0.3), 0.01);
  CHECK_NOTHROW(space.validate());
  CHECK(space.dim() == 3);

  KeypointDistribution bad = space;
  bad.covariance(0, 1) = bad.covariance(1, 0) + 1e-9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = space;
  bad.covariance = MatX::Identity(3, 3);
  bad.covariance(2, 2) = -1e-6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = space;
  bad.covariance = MatX::Identity(2, 2);
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = space;
  bad.mean(1) = std::nan("");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sample_candidates degenerate and deterministic") {
  const Vec3 mu(0.4, -0.1, 0.2);
  KeypointDistribution space = space3(mu, 0.0);

  const std::vector<VecX> all_mu = sample_candidates(space, 8, 0.0, 7);
  REQUIRE(all_mu.size() == 8);
  for (const VecX& x : all_mu) CHECK((x - mu).norm() == 0.0);

  space = space3(mu, 0.01);
  const std::vector<VecX> a = sample_candidates(space, 16, 1e-8, 11);
  const std::vector<VecX> b = sample_candidates(space, 16, 1e-8, 11);
  const std::vector<VecX> c = sample_candidates(space, 16, 1e-8, 12);
  for (size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() == 0.0);
  bool any_differ = false;
  for (size_t i = 0; i < a.size(); ++i)
    any_differ = any_differ || (a[i] - c[i]).norm() > 0.0;
  CHECK(any_differ);

  CHECK_THROWS_AS(sample_candidates(space, 0, 0.0, 1), ContractError);
}

TEST_CASE("sample_candidates matches its covariance statistically") {
  const int n = 10000;
  const Vec3 mu(0.1, 0.2, -0.3);

  KeypointDistribution space = space3(mu, 0.01);
  std::vector<VecX> draws = sample_candidates(space, n, 0.0, 21);
  VecX mean = VecX::Zero(3);
  for (const VecX& x : draws) mean += x / n;
  MatX cov = MatX::Zero(3, 3);
  for (const VecX& x : draws) cov += (x - mean) * (x - mean).transpose() / n;
  CHECK((cov - space.covariance).norm() < 0.1 * space.covariance.norm());
  CHECK((mean - mu).norm() < 0.005);

  // Correlated covariance through the same public path.
  MatX a(3, 3);
  a << 0.09, 0.03, 0.0, 0.0, 0.06, 0.02, 0.01, 0.0, 0.05;
  space.covariance = a * a.transpose();
  space.covariance = 0.5 * (space.covariance + space.covariance.transpose());
  draws = sample_candidates(space, 2 * n, 0.0, 22);
  mean.setZero();
  for (const VecX& x : draws) mean += x / (2 * n);
  cov.setZero();
  for (const VecX& x : draws)
    cov += (x - mean) * (x - mean).transpose() / (2 * n);
  CHECK((cov - space.covariance).norm() < 0.1 * space.covariance.norm());
}

TEST_CASE("refit reproduces the stated two-elite example exactly") {
  std::vector<VecX> elites;
  elites.push_back(Vec3(1.0, 0.0, 0.0));
  elites.push_back(Vec3(0.0, 1.0, 0.0));
  const auto [mean, cov] = refit(elites, 0.0);

  CHECK(mean(0) == 0.5);
  CHECK(mean(1) == 0.5);
  CHECK(mean(2) == 0.0);
  MatX expected(3, 3);
  expected << 0.25, -0.25, 0.0, -0.25, 0.25, 0.0, 0.0, 0.0, 0.0;
  CHECK((cov - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("refit single elite gives jitter covariance") {
  std::vector<VecX> elites;
  elites.push_back(Vec3(0.3, -0.2, 0.9));
  const auto [mean, cov] = refit(elites, 1e-8);
  CHECK((mean - elites[0]).norm() == 0.0);
  CHECK((cov - 1e-8 * MatX::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("refit matches the covariance oracle on random elite sets") {
  Rng rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform(0.0, 12.0));
    std::vector<VecX> elites;
    for (int i = 0; i < k; ++i) {
      VecX x(3);
      for (int a = 0; a < 3; ++a) x(a) = rng.uniform(-1.0, 1.0);
      elites.push_back(x);
    }
    const auto [mean, cov] = refit(elites, 0.0);
    const MatX expected = oracle_covariance(elites);
    CHECK((cov - expected).cwiseAbs().maxCoeff() <= 1e-12);

    // Symmetric PSD after jitter on every input.
    const auto [mean2, cov2] = refit(elites, 1e-8);
    CHECK((cov2 - cov2.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    Eigen::SelfAdjointEigenSolver<MatX> eig(cov2);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
    (void)mean;
    (void)mean2;
  }
}

TEST_CASE("refit contract violations") {
  CHECK_THROWS_AS(refit({}, 0.0), ContractError);
  std::vector<VecX> mixed;
  mixed.push_back(Vec3(1.0, 0.0, 0.0));
  mixed.push_back(VecX::Zero(6));
  CHECK_THROWS_AS(refit(mixed, 0.0), ContractError);
}

TEST_CASE("evaluate_candidate averages rollout returns") {
  const Scene scene = reach_scene();
  const PolicyParams params = frozen_policy(scene, 5);
  const Env env(scene, DomainRandomizationConfig{}, PerturbationConfig{});
  EpisodeConfig episode;
  TaskReturnSpec task;
  task.kind = TaskReturnKind::reach_hold;
  task.threshold = scene.grasp_radius;

  const VecX x = Vec3(0.35, 0.20, 0.0);
  const CandidateEvaluation one =
      evaluate_candidate(x, params, env, episode, task, 1, 91);
  REQUIRE(one.returns.size() == 1);
  CHECK(one.average_return == one.returns[0]);
  CHECK(!one.out_of_workspace);

  const CandidateEvaluation three =
      evaluate_candidate(x, params, env, episode, task, 3, 91);
  REQUIRE(three.returns.size() == 3);
  const double mean =
      (three.returns[0] + three.returns[1] + three.returns[2]) / 3.0;
  CHECK(three.average_return == doctest::Approx(mean).epsilon(1e-15));
  for (double r : three.returns) {
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }

  // DR active: rollouts see different worlds, deterministically per seed.
  const Env dr_env(scene, DomainRandomizationConfig{.enabled = true},
                   PerturbationConfig{});
  const CandidateEvaluation noisy =
      evaluate_candidate(x, params, dr_env, episode, task, 2, 17);
  const CandidateEvaluation noisy2 =
      evaluate_candidate(x, params, dr_env, episode, task, 2, 17);
  CHECK(noisy.average_return == noisy2.average_return);
}

TEST_CASE("evaluate_candidate flags out-of-workspace keypoints") {
  const Scene scene = reach_scene();
  const PolicyParams params = frozen_policy(scene, 5);
  const Env env(scene, DomainRandomizationConfig{}, PerturbationConfig{});
  EpisodeConfig episode;
  TaskReturnSpec task;
  task.kind = TaskReturnKind::reach_hold;

  const double reach = scene.chain.reach();
  const VecX far = Vec3(reach * 1.5 + 0.01, 0.0, 0.0);
  const CandidateEvaluation eval =
      evaluate_candidate(far, params, env, episode, task, 2, 1);
  CHECK(eval.out_of_workspace);
  CHECK(eval.average_return == 0.0);
  CHECK(eval.returns.empty());

  CHECK_THROWS_AS(
      evaluate_candidate(VecX::Zero(4), params, env, episode, task, 1, 1),
      ContractError);
  CHECK_THROWS_AS(
      evaluate_candidate(Vec3(0.3, 0.0, 0.0), params, env, episode, task, 0, 1),
      ContractError);
}

TEST_CASE("evaluate_candidate six-dim mode") {
  const Scene scene = reach_scene();
  const PolicyParams params = frozen_policy(scene, 5);
  const Env env(scene, DomainRandomizationConfig{}, PerturbationConfig{});
  EpisodeConfig episode;
  TaskReturnSpec task;
  task.kind = TaskReturnKind::reach_hold;
  task.threshold = scene.grasp_radius;

  VecX base(6);
  base << 0.35, 0.20, 0.0, 0.0, 0.0, 0.0;
  const CandidateEvaluation zero_offset =
      evaluate_candidate(base, params, env, episode, task, 1, 91);
  const CandidateEvaluation plain = evaluate_candidate(
      VecX(base.head(3)), params, env, episode, task, 1, 91);
  CHECK(zero_offset.average_return == plain.average_return);

  VecX rotated = base;
  rotated(5) = 0.8;  // yaw offset changes the commanded orientation tokens
  const CandidateEvaluation turned =
      evaluate_candidate(rotated, params, env, episode, task, 1, 91);
  CHECK(std::isfinite(turned.average_return));
  CHECK(turned.average_return >= 0.0);
  CHECK(turned.average_return <= 1.0);
}

TEST_CASE("optimize_scored on the synthetic concave landscape") {
  const Vec3 x_star(0.40, 0.10, 0.05);
  KeypointDistribution initial =
      space3(x_star + Vec3(0.05, 0.05, 0.0), 0.0025);

  CemConfig cfg;
  cfg.max_iterations = 20;

  const CemResult result =
      optimize_scored(synthetic_landscape(x_star), initial, cfg, 99);

  CHECK((Vec3(result.space.mean) - x_star).norm() < 0.01);
  REQUIRE(!result.refits.empty());

  // Elite mean dominates the population mean at every refit.
  for (const RefitRecord& r : result.refits)
    CHECK(r.elite_mean_return >= r.population_mean_return - 1e-15);

  // Covariance collapses monotonically enough to terminate early.
  CHECK(result.converged);
  CHECK(result.space.iteration <= cfg.max_iterations);

  // History bookkeeping: every iteration contributes sample_size candidate
  // records, exactly elite_size of them flagged elite.
  const int iterations = result.space.iteration;
  CHECK(static_cast<int>(result.candidates.size()) ==
        iterations * cfg.sample_size);
  for (int t = 0; t < iterations; ++t) {
    int elites = 0;
    for (const CandidateRecord& rec : result.candidates)
      if (rec.iteration == t && rec.elite) ++elites;
    CHECK(elites == cfg.elite_size);
  }
}

TEST_CASE("optimize_scored best-elite return trend on the synthetic landscape") {
  const Vec3 x_star(0.40, 0.10, 0.05);
  KeypointDistribution initial =
      space3(x_star + Vec3(0.05, 0.05, 0.0), 0.0025);
  CemConfig cfg;
  cfg.max_iterations = 20;

  const CemResult result =
      optimize_scored(synthetic_landscape(x_star), initial, cfg, 5);

  std::vector<double> best_per_iter;
  for (int t = 0; t < result.space.iteration; ++t) {
    double best = -1.0;
    for (const CandidateRecord& rec : result.candidates)
      if (rec.iteration == t) best = std::max(best, rec.eval.average_return);
    best_per_iter.push_back(best);
  }
  // Non-decreasing within the sampling tolerance of the shrinking cloud.
  for (size_t t = 1; t < best_per_iter.size(); ++t)
    CHECK(best_per_iter[t] >= best_per_iter[t - 1] - 0.005);
  CHECK(best_per_iter.back() > 0.99);
}

TEST_CASE("optimize_scored degenerate one-iteration full-sample refit") {
  KeypointDistribution initial = space3(Vec3(0.2, 0.1, 0.0), 0.0025);
  CemConfig cfg;
  cfg.sample_size = 6;
  cfg.elite_size = 6;
  cfg.max_iterations = 1;
  cfg.jitter = 0.0;

  const CemResult result =
      optimize_scored(synthetic_landscape(Vec3(0.0, 0.0, 0.0)), initial, cfg, 3);

  REQUIRE(result.refits.size() == 1);
  REQUIRE(result.candidates.size() == 6);
  VecX mean = VecX::Zero(3);
  for (const CandidateRecord& rec : result.candidates) {
    CHECK(rec.elite);
    mean += rec.eval.candidate;
  }
  mean /= 6.0;
  CHECK((result.space.mean - mean).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("optimize_scored tie-break keeps ascending sample order") {
  const CandidateScorer constant = [](const VecX& candidate, uint64_t) {
    CandidateEvaluation eval;
    eval.candidate = candidate;
    eval.returns = {0.5};
    eval.average_return = 0.5;
    return eval;
  };
  KeypointDistribution initial = space3(Vec3(0.2, 0.1, 0.0), 0.0025);
  CemConfig cfg;
  cfg.sample_size = 10;
  cfg.elite_size = 4;
  cfg.max_iterations = 1;

  const CemResult result = optimize_scored(constant, initial, cfg, 13);
  for (const CandidateRecord& rec : result.candidates)
    CHECK(rec.elite == (rec.index < cfg.elite_size));
}

TEST_CASE("optimize_scored is seed-reproducible") {
  const Vec3 x_star(0.40, 0.10, 0.05);
  KeypointDistribution initial = space3(x_star + Vec3(0.03, -0.04, 0.0), 0.0025);
  CemConfig cfg;
  cfg.max_iterations = 5;
  cfg.sigma_threshold = 1e-12;  // keep all 5 iterations alive

  const CemResult a = optimize_scored(synthetic_landscape(x_star), initial, cfg, 7);
  const CemResult b = optimize_scored(synthetic_landscape(x_star), initial, cfg, 7);
  const CemResult c = optimize_scored(synthetic_landscape(x_star), initial, cfg, 8);

  REQUIRE(a.candidates.size() == b.candidates.size());
  for (size_t i = 0; i < a.candidates.size(); ++i) {
    CHECK((a.candidates[i].eval.candidate - b.candidates[i].eval.candidate)
              .norm() == 0.0);
    CHECK(a.candidates[i].eval.average_return ==
          b.candidates[i].eval.average_return);
    CHECK(a.candidates[i].elite == b.candidates[i].elite);
  }
  CHECK((a.space.mean - b.space.mean).norm() == 0.0);
  CHECK((a.space.covariance - b.space.covariance).norm() == 0.0);

  bool differs = (a.space.mean - c.space.mean).norm() > 0.0;
  CHECK(differs);
}

TEST_CASE("optimize_scored results do not depend on the jobs count") {
  const Vec3 x_star(0.40, 0.10, 0.05);
  KeypointDistribution initial = space3(x_star + Vec3(0.05, 0.0, 0.0), 0.0025);
  CemConfig cfg;
  cfg.max_iterations = 3;
  cfg.sigma_threshold = 1e-12;

  cfg.jobs = 1;
  const CemResult serial =
      optimize_scored(synthetic_landscape(x_star), initial, cfg, 4);
  cfg.jobs = 4;
  const CemResult parallel =
      optimize_scored(synthetic_landscape(x_star), initial, cfg, 4);

  CHECK((serial.space.mean - parallel.space.mean).norm() == 0.0);
  CHECK((serial.space.covariance - parallel.space.covariance).norm() == 0.0);
}

TEST_CASE("optimize aborts when every candidate leaves the workspace") {
  const Scene scene = reach_scene();
  const PolicyParams params = frozen_policy(scene, 5);
  const Env env(scene, DomainRandomizationConfig{}, PerturbationConfig{});
  EpisodeConfig episode;
  TaskReturnSpec task;
  task.kind = TaskReturnKind::reach_hold;

  const double reach = scene.chain.reach();
  KeypointDistribution initial =
      space3(Vec3(reach * 1.5 + 1.0, 0.0, 0.0), 1e-8);
  CemConfig cfg;
  cfg.max_iterations = 2;

  CHECK_THROWS_AS(optimize(initial, params, env, episode, task, cfg, 1),
                  OutOfWorkspaceError);
}

TEST_CASE("optimize dimension gate follows the orientation switch") {
  const Scene scene = reach_scene();
  const PolicyParams params = frozen_policy(scene, 5);
  const Env env(scene, DomainRandomizationConfig{}, PerturbationConfig{});
  EpisodeConfig episode;
  TaskReturnSpec task;
  task.kind = TaskReturnKind::reach_hold;

  CemConfig cfg;
  cfg.max_iterations = 1;
  cfg.sample_size = 2;
  cfg.elite_size = 1;

  KeypointDistribution six;
  six.mean = VecX::Zero(6);
  six.covariance = 1e-6 * MatX::Identity(6, 6);
  CHECK_THROWS_AS(optimize(six, params, env, episode, task, cfg, 1),
                  ConfigError);

  cfg.optimize_orientation = true;
  KeypointDistribution three = space3(Vec3(0.3, 0.1, 0.0), 1e-6);
  CHECK_THROWS_AS(optimize(three, params, env, episode, task, cfg, 1),
                  ConfigError);
}
