#pragma once

#include <cstdint>
#include <vector>

#include "affkit/env.hpp"
#include "affkit/policy.hpp"
#include "affkit/reward.hpp"

namespace affkit {

struct EpisodeConfig {
  ObservationSpec obs_spec;
  bool stochastic = false;   // greedy (mean action) when false
  bool with_reward = false;  // accumulate shaped step rewards
  RewardWeights weights;
};

struct EpisodeResult {
  std::vector<StepInfo> trajectory;
  double reward_sum = 0.0;
  double final_distance = 0.0;
  double final_angle = 0.0;
  bool grasp_reached = false;
};

/// Runs one full episode under the frozen policy, handling the gripper rule:
/// grasping tasks open until the commanded keypoint is first reached, then
/// closed; non-grasping tasks closed throughout.
EpisodeResult run_episode(const Env& env, const PolicyParams& params,
                          const EpisodeConfig& cfg, const Vec3& keypoint,
                          uint64_t seed);

}  // namespace affkit
