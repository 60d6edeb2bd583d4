#include "affkit/cem.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <utility>

#include "affkit/env.hpp"
#include "affkit/parallel.hpp"
#include "affkit/rng.hpp"

namespace affkit {
namespace {

constexpr uint64_t kSampleTag = 0x30;
constexpr uint64_t kCandidateTag = 0x31;

// Symmetric PSD square root; the indefinite case raises after jitter.
MatX symmetric_sqrt(const MatX& covariance, double jitter) {
  const auto d = covariance.rows();
  MatX jittered = covariance;
  jittered.diagonal().array() += jitter;
  Eigen::SelfAdjointEigenSolver<MatX> eig(jittered);
  if (eig.info() != Eigen::Success)
    throw DegenerateCovarianceError("cem: covariance eigendecomposition failed");
  VecX lambda = eig.eigenvalues();
  const double floor = -1e-9 * std::max(1.0, lambda.maxCoeff());
  if (lambda.minCoeff() < floor) {
    throw DegenerateCovarianceError(
        "cem: covariance indefinite after jitter, min eigenvalue " +
        std::to_string(lambda.minCoeff()));
  }
  lambda = lambda.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * lambda.asDiagonal() *
         eig.eigenvectors().transpose();
}

Quat orientation_offset(const VecX& tail) {
  const Vec3 v = tail;
  const double angle = v.norm();
  if (angle == 0.0) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, v / angle));
}

}  // namespace

void KeypointDistribution::validate() const {
  const auto d = mean.size();
  if (d <= 0) throw ConfigError("cem.mean", "must be non-empty");
  if (!mean.allFinite()) throw ConfigError("cem.mean", "must be finite");
  if (covariance.rows() != d || covariance.cols() != d)
    throw ConfigError("cem.covariance", "shape must match the mean dimension");
  if (!covariance.allFinite())
    throw ConfigError("cem.covariance", "must be finite");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("cem.covariance", "must be symmetric within 1e-12");
  Eigen::SelfAdjointEigenSolver<MatX> eig(covariance);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -1e-12)
    throw ConfigError("cem.covariance", "must be PSD up to -1e-12");
}

KeypointDistribution KeypointDistribution::isotropic(const Vec3& mean,
                                                     double variance) {
  KeypointDistribution space;
  space.mean = mean;
  space.covariance = variance * MatX::Identity(3, 3);
  return space;
}

void CemConfig::validate() const {
  if (sample_size < 2) throw ConfigError("cem.sample_size", "must be >= 2");
  if (elite_size < 1 || elite_size > sample_size)
    throw ConfigError("cem.elite_size", "must be in [1, sample_size]");
  if (rollouts < 1) throw ConfigError("cem.rollouts", "must be >= 1");
  if (max_iterations < 1)
    throw ConfigError("cem.max_iterations", "must be >= 1");
  if (!(sigma_threshold > 0.0))
    throw ConfigError("cem.sigma_threshold", "must be > 0");
  if (!(jitter >= 0.0)) throw ConfigError("cem.jitter", "must be >= 0");
}

std::vector<VecX> sample_candidates(const KeypointDistribution& space,
                                    int count, double jitter, uint64_t seed) {
  space.validate();
  if (count < 1) throw ContractError("cem: candidate count must be >= 1");
  const MatX root = symmetric_sqrt(space.covariance, jitter);
  Rng rng(seed);
  std::vector<VecX> candidates;
  candidates.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    candidates.push_back(space.mean + root * rng.normal_vector(space.dim()));
  return candidates;
}

std::pair<VecX, MatX> refit(const std::vector<VecX>& elites, double jitter) {
  if (elites.empty()) throw ContractError("cem: refit needs at least one elite");
  const auto d = elites.front().size();
  for (const VecX& x : elites)
    if (x.size() != d)
      throw ContractError("cem: elites disagree on dimension");

  VecX mean = VecX::Zero(d);
  for (const VecX& x : elites) mean += x;
  mean /= static_cast<double>(elites.size());

  MatX cov = MatX::Zero(d, d);
  for (const VecX& x : elites) {
    const VecX c = x - mean;
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(elites.size());
  cov.diagonal().array() += jitter;
  return {std::move(mean), std::move(cov)};
}

Scene scene_for_candidate(const Scene& scene, const VecX& candidate) {
  if (candidate.size() != 3 && candidate.size() != 6)
    throw ContractError("cem: candidate dimension must be 3 or 6");
  Scene adjusted = scene;
  if (candidate.size() == 6) {
    adjusted.target_orientation =
        adjusted.target_orientation * orientation_offset(candidate.tail(3));
  }
  return adjusted;
}

CandidateEvaluation evaluate_candidate(const VecX& candidate,
                                       const PolicyParams& params,
                                       const Env& env,
                                       const EpisodeConfig& episode,
                                       const TaskReturnSpec& task,
                                       int rollouts, uint64_t seed) {
  if (candidate.size() != 3 && candidate.size() != 6)
    throw ContractError("cem: candidate dimension must be 3 or 6");
  if (rollouts < 1) throw ContractError("cem: rollouts must be >= 1");

  CandidateEvaluation eval;
  eval.candidate = candidate;

  const Vec3 position = candidate.head(3);
  if (position.norm() > env.scene().chain.reach() * 1.5) {
    eval.out_of_workspace = true;
    return eval;
  }

  // The 6-dim mode rotates the commanded orientation; position-only reuses
  // the caller's environment untouched.
  const Env* chosen = &env;
  std::unique_ptr<Env> rotated;
  if (candidate.size() == 6) {
    rotated = std::make_unique<Env>(scene_for_candidate(env.scene(), candidate),
                                    env.dr(), env.perturbation());
    chosen = rotated.get();
  }

  double sum = 0.0;
  for (int j = 0; j < rollouts; ++j) {
    const EpisodeResult res =
        run_episode(*chosen, params, episode, position,
                    derive_seed({seed, static_cast<uint64_t>(j)}));
    const double ret = task_return(res.trajectory, task);
    eval.returns.push_back(ret);
    sum += ret;
  }
  eval.average_return = sum / rollouts;
  return eval;
}

CemResult optimize_scored(const CandidateScorer& scorer,
                          const KeypointDistribution& initial,
                          const CemConfig& config, uint64_t seed) {
  config.validate();
  initial.validate();

  CemResult result;
  result.space = initial;

  for (int t = 0; t < config.max_iterations; ++t) {
    const std::vector<VecX> candidates = sample_candidates(
        result.space, config.sample_size, config.jitter,
        derive_seed({seed, kSampleTag, static_cast<uint64_t>(t)}));

    std::vector<CandidateEvaluation> evals(candidates.size());
    std::exception_ptr error;
    std::mutex error_mutex;
    parallel_chunks(config.sample_size, 1, config.jobs, [&](int, int lo, int) {
      try {
        evals[static_cast<size_t>(lo)] = scorer(
            candidates[static_cast<size_t>(lo)],
            derive_seed({seed, kCandidateTag, static_cast<uint64_t>(t),
                         static_cast<uint64_t>(lo)}));
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
    if (error) std::rethrow_exception(error);

    const int failed = static_cast<int>(
        std::count_if(evals.begin(), evals.end(),
                      [](const CandidateEvaluation& e) { return e.out_of_workspace; }));
    if (failed == config.sample_size) {
      throw OutOfWorkspaceError(
          "cem: every candidate of iteration " + std::to_string(t) +
          " fell outside the workspace (mean norm " +
          std::to_string(result.space.mean.head(3).norm()) + ")");
    }

    // Top-k by average return; stable sort keeps sample order on exact ties.
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return evals[static_cast<size_t>(a)].average_return >
             evals[static_cast<size_t>(b)].average_return;
    });

    std::vector<VecX> elites;
    elites.reserve(static_cast<size_t>(config.elite_size));
    std::vector<bool> is_elite(candidates.size(), false);
    for (int r = 0; r < config.elite_size; ++r) {
      const int idx = order[static_cast<size_t>(r)];
      is_elite[static_cast<size_t>(idx)] = true;
      elites.push_back(candidates[static_cast<size_t>(idx)]);
    }

    double population_sum = 0.0, elite_sum = 0.0;
    for (size_t i = 0; i < evals.size(); ++i) {
      population_sum += evals[i].average_return;
      if (is_elite[i]) elite_sum += evals[i].average_return;
      CandidateRecord record;
      record.iteration = t;
      record.index = static_cast<int>(i);
      record.eval = evals[i];
      record.elite = is_elite[i];
      result.candidates.push_back(std::move(record));
    }

    auto [mean, cov] = refit(elites, config.jitter);
    result.space.mean = std::move(mean);
    result.space.covariance = std::move(cov);
    result.space.iteration = t + 1;

    RefitRecord refit_record;
    refit_record.iteration = t;
    refit_record.space = result.space;
    refit_record.elite_mean_return = elite_sum / config.elite_size;
    refit_record.population_mean_return = population_sum / config.sample_size;
    refit_record.covariance_norm = result.space.covariance.norm();
    result.refits.push_back(std::move(refit_record));

    if (result.refits.back().covariance_norm < config.sigma_threshold) {
      result.converged = true;
      break;
    }
  }
  return result;
}

CemResult optimize(const KeypointDistribution& initial,
                   const PolicyParams& params, const Env& env,
                   const EpisodeConfig& episode, const TaskReturnSpec& task,
                   const CemConfig& config, uint64_t seed) {
  task.validate();
  if (config.optimize_orientation ? initial.dim() != 6 : initial.dim() != 3) {
    throw ConfigError("cem.mean",
                      config.optimize_orientation ? "6-dim mode needs dim 6"
                                                  : "position mode needs dim 3");
  }
  const CandidateScorer scorer = [&](const VecX& candidate, uint64_t s) {
    return evaluate_candidate(candidate, params, env, episode, task,
                              config.rollouts, s);
  };
  return optimize_scored(scorer, initial, config, seed);
}

}  // namespace affkit
