#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "affkit/common.hpp"
#include "affkit/policy.hpp"
#include "affkit/reward.hpp"
#include "affkit/rollout.hpp"

namespace affkit {

/// Gaussian search distribution over candidate keypoints. Dimension is 3
/// (position, meters) or 6 (position + axis-angle offset applied to the
/// scene's target orientation).
struct KeypointDistribution {
  VecX mean;
  MatX covariance;
  int iteration = 0;

  int dim() const { return static_cast<int>(mean.size()); }

  /// Square shape, symmetry within 1e-12, eigenvalues >= -1e-12.
  void validate() const;

  static KeypointDistribution isotropic(const Vec3& mean, double variance);
};

struct CemConfig {
  int sample_size = 32;      // candidates per iteration
  int elite_size = 8;        // top candidates kept for the refit
  int rollouts = 2;          // episodes averaged per candidate
  int max_iterations = 30;
  double sigma_threshold = 1e-5;  // terminate when ||cov||_F drops below
  double jitter = 1e-8;           // added as jitter*I when sampling and refitting
  bool optimize_orientation = false;  // 6-dim mode
  // Worker threads for candidate evaluation; <= 0 means hardware concurrency.
  // Results are independent of this value (per-candidate seed streams).
  int jobs = 0;

  void validate() const;
};

struct CandidateEvaluation {
  VecX candidate;
  std::vector<double> returns;  // one per rollout
  double average_return = 0.0;
  bool out_of_workspace = false;
};

struct CandidateRecord {
  int iteration = 0;
  int index = 0;  // position within the iteration's sample
  CandidateEvaluation eval;
  bool elite = false;
};

struct RefitRecord {
  int iteration = 0;  // iteration whose elites produced this distribution
  KeypointDistribution space;
  double elite_mean_return = 0.0;
  double population_mean_return = 0.0;
  double covariance_norm = 0.0;  // Frobenius norm driving termination
};

struct CemResult {
  KeypointDistribution space;
  std::vector<CandidateRecord> candidates;
  std::vector<RefitRecord> refits;
  bool converged = false;  // covariance collapsed before the iteration cap
};

/// Draws `count` i.i.d. samples from N(mean, covariance + jitter*I) through
/// the symmetric matrix square root. Deterministic per seed; a covariance
/// that stays indefinite after jitter raises DegenerateCovarianceError.
std::vector<VecX> sample_candidates(const KeypointDistribution& space,
                                    int count, double jitter, uint64_t seed);

/// Elite mean and the biased covariance (1/k)*sum (x-mean)(x-mean)^T plus
/// jitter*I. Requires at least one elite, all of equal dimension.
std::pair<VecX, MatX> refit(const std::vector<VecX>& elites, double jitter);

/// Scene a candidate is evaluated in: 3-dim candidates leave the scene
/// untouched; 6-dim candidates rotate the target orientation by the tail's
/// rotation-vector offset. The commanded position is candidate.head(3).
Scene scene_for_candidate(const Scene& scene, const VecX& candidate);

/// Scores one candidate by the mean task_return of `rollouts` greedy episodes
/// under the frozen policy. Candidates whose position lies outside 1.5x the
/// arm's reach score 0 and are flagged instead of raising. Rollout j uses
/// seed derive_seed({seed, j}).
CandidateEvaluation evaluate_candidate(const VecX& candidate,
                                       const PolicyParams& params,
                                       const Env& env,
                                       const EpisodeConfig& episode,
                                       const TaskReturnSpec& task,
                                       int rollouts, uint64_t seed);

/// Scores one candidate given its derived seed; must fill the evaluation's
/// candidate, returns, average and out-of-workspace flag.
using CandidateScorer =
    std::function<CandidateEvaluation(const VecX& candidate, uint64_t seed)>;

/// Cross-entropy refinement loop: sample, score, keep the top elite_size
/// candidates by average return (ties broken by sample index, ascending),
/// refit, and stop once the covariance norm falls below sigma_threshold or
/// max_iterations is reached. An iteration where every candidate falls out
/// of the workspace aborts with OutOfWorkspaceError. History records every
/// candidate evaluation and every refit. Candidate i of iteration t is
/// scored with an independent derived seed, so results do not depend on the
/// evaluation order or the jobs count.
CemResult optimize_scored(const CandidateScorer& scorer,
                          const KeypointDistribution& initial,
                          const CemConfig& config, uint64_t seed);

/// Episode-backed refinement: scores candidates with evaluate_candidate
/// under the frozen policy in the given environment.
CemResult optimize(const KeypointDistribution& initial,
                   const PolicyParams& params, const Env& env,
                   const EpisodeConfig& episode, const TaskReturnSpec& task,
                   const CemConfig& config, uint64_t seed);

}  // namespace affkit
