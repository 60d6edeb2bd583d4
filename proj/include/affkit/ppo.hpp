#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "affkit/common.hpp"
#include "affkit/env.hpp"
#include "affkit/policy.hpp"
#include "affkit/reward.hpp"

namespace affkit {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_ratio = 0.2;
  int epochs = 4;
  int minibatch_size = 256;
  double learning_rate = 1e-3;
  bool lr_linear_decay = true;
  // Entropy regularization fights the natural Gaussian-width shrink that
  // precise reaching needs, so it is off by default.
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double grad_clip = 0.5;
  int rollout_steps = 64;
  int num_envs = 16;
  int total_updates = 900;
  // Training keypoints are drawn uniformly from an axis-aligned box of these
  // half-widths around the scene's initial guess.
  Vec3 keypoint_halfwidth = Vec3(0.10, 0.10, 0.10);
  int eval_every = 25;  // 0 disables periodic evaluation
  int eval_episodes = 20;
  // Worker threads for forward/backward batches and evaluation episodes;
  // non-positive means hardware concurrency. Work is split into fixed-size
  // chunks reduced in chunk order, so results do not depend on this value.
  int jobs = 0;

  void validate() const;
};

/// Flat storage for one on-policy rollout. Column/index layout is env-major:
/// sample (env e, step t) lives at index e * steps + t, so each env's
/// trajectory is contiguous in time.
struct RolloutBuffer {
  int num_envs = 0;
  int steps = 0;
  std::vector<Observation> observations;  // size num_envs * steps
  MatX actions;                           // dof x (num_envs * steps), pre-clip samples
  VecX log_probs;                         // behaviour log-density of the pre-clip sample
  VecX rewards;
  VecX values;
  std::vector<uint8_t> done;       // 1 where the episode ended at this step
  VecX bootstrap_values;           // num_envs; V(s_T) per env, ignored after done
  int size() const { return num_envs * steps; }
};

struct GaeResult {
  VecX advantages;  // raw, un-normalized
  VecX returns;     // advantages + values
};

/// Generalized advantage estimation over the buffer. Episode ends zero the
/// bootstrap: delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t),
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}. Advantages are
/// returned raw; normalization happens inside ppo_update.
GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

/// Shifts to zero mean and scales to unit standard deviation (eps-guarded).
VecX normalize_advantages(const VecX& advantages);

/// Uniform draw from the axis-aligned box guess +/- halfwidth (component-wise).
Vec3 sample_training_keypoint(const Vec3& guess, const Vec3& halfwidth,
                              uint64_t seed);

struct AdamState {
  GradMap m;
  GradMap v;
  int64_t t = 0;
};

struct UpdateMetrics {
  double surrogate = 0.0;      // clipped objective, higher is better
  double value_loss = 0.0;     // 0.5 * mean squared value error
  double entropy = 0.0;
  double approx_kl = 0.0;      // mean(logp_old - logp_new)
  double clip_fraction = 0.0;  // fraction of samples with |ratio - 1| > clip
  double grad_norm = 0.0;      // pre-clip global gradient norm, last step
  double lr = 0.0;
  bool aborted = false;  // non-finite loss; params were restored
};

/// One PPO update over the buffer: advantages are normalized here, then
/// `epochs` passes of shuffled minibatches apply the clipped surrogate,
/// value loss and entropy bonus via Adam with global-norm gradient clipping.
/// A non-finite loss or gradient aborts the update and restores both the
/// parameters and the optimizer state to their values at entry.
UpdateMetrics ppo_update(PolicyParams& params, const RolloutBuffer& buffer,
                         const PpoConfig& config, double lr_now,
                         AdamState& adam, uint64_t seed);

struct TrainLogEntry {
  int update = 0;
  double mean_episode_return = 0.0;  // episodes finished during this rollout
  int episodes_finished = 0;
  double mean_step_reward = 0.0;  // defined even when no episode finished
  double curriculum_progress = 0.0;
  UpdateMetrics metrics;
  bool has_eval = false;
  double eval_success_rate = 0.0;
  double eval_mean_distance = 0.0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<TrainLogEntry> log;
};

/// Full training loop: persistent envs stepped in lockstep, episodes reset on
/// horizon exhaustion with freshly sampled keypoints, reward weights follow
/// the curriculum at progress = updates_done / total_updates, and periodic
/// greedy evaluation runs on the nominal (randomization-free) scene. The
/// policy's dof and action bound are taken from the scene's chain. Driven
/// entirely by `seed`: identical seeds give bitwise-identical logs. The
/// optional callback observes each log entry as it is produced (progress
/// reporting only; it must not mutate shared state the trainer reads).
TrainResult train(const Scene& scene, const DomainRandomizationConfig& dr,
                  const CurriculumSchedule& curriculum,
                  const PolicyConfig& policy_config, const PpoConfig& config,
                  uint64_t seed,
                  const std::function<void(const TrainLogEntry&)>& on_update = {});

/// Success thresholds shared by evaluation and the experiment harness. A
/// greedy reach episode counts as a success when the final end-effector pose
/// is within both bounds; the grasp radius anchors the distance scale.
constexpr double kReachDistanceThreshold = 0.02;  // meters
constexpr double kReachAngleThreshold = 0.2;      // radians

}  // namespace affkit
