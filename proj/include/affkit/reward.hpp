#pragma once

#include <utility>
#include <vector>

#include "affkit/common.hpp"
#include "affkit/env.hpp"

namespace affkit {

struct RewardWeights {
  double w_d1 = -0.5;  // linear distance coefficient, must be <= 0
  double w_d2 = 1.0;   // coarse kernel weight
  double w_d3 = 2.0;   // fine kernel weight
  double sigma1 = 0.3;  // coarse kernel scale, meters
  double sigma2 = 0.05; // fine kernel scale, meters
  // Orientation stays secondary to position: a heavier weight visibly costs
  // reach precision on the default planar scene.
  double w_ori = 0.2;
  double w_l2 = 0.01;
  double w_rate = 0.01;
  double w_vel = 0.005;

  void validate() const;
};

struct CurriculumSchedule {
  // (training-progress fraction, weights at that point); linear in between.
  std::vector<std::pair<double, RewardWeights>> phases;

  void validate() const;
  static CurriculumSchedule constant(const RewardWeights& w);
  // Actuation penalties start at 10% strength and ramp to full.
  static CurriculumSchedule default_schedule(const RewardWeights& full);
  static CurriculumSchedule default_schedule();
};

RewardWeights curriculum_weights(const CurriculumSchedule& schedule, double progress);

double distance_reward(double d, const RewardWeights& w);
double orientation_reward(double theta, const RewardWeights& w);
double action_reward(const VecX& a, const VecX& a_prev, const VecX& qdot,
                     const RewardWeights& w);

struct RewardTerms {
  double dist = 0.0;
  double ori = 0.0;
  double act = 0.0;

  double total() const { return dist + ori + act; }
};

RewardTerms step_reward_terms(const StepInfo& info, const VecX& a, const VecX& a_prev,
                              const RewardWeights& w);
double step_reward(const StepInfo& info, const VecX& a, const VecX& a_prev,
                   const RewardWeights& w);

enum class TaskReturnKind { articulation_progress, reach_hold };

struct TaskReturnSpec {
  TaskReturnKind kind = TaskReturnKind::articulation_progress;
  double travel = 0.0;      // articulation normalization denominator
  double threshold = 0.04;  // reach-hold distance threshold, meters

  void validate() const;
};

// Episode-level score in [0, 1] used as the candidate-keypoint objective.
double task_return(const std::vector<StepInfo>& trajectory, const TaskReturnSpec& spec);

}  // namespace affkit
