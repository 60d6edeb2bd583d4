#include "affkit/reward.hpp"

#include <cmath>

namespace affkit {

void RewardWeights::validate() const {
  if (w_d1 > 0.0) {
    throw ConfigError("reward.w_d1", "must be <= 0 (distance penalty)");
  }
  if (!(sigma1 > sigma2) || !(sigma2 > 0.0)) {
    throw ConfigError("reward.sigma1", "kernel scales must satisfy sigma1 > sigma2 > 0");
  }
  if (w_ori < 0.0 || w_l2 < 0.0 || w_rate < 0.0 || w_vel < 0.0) {
    throw ConfigError("reward.w_ori", "penalty weights must be >= 0");
  }
}

void CurriculumSchedule::validate() const {
  if (phases.empty()) {
    throw ConfigError("reward.curriculum", "needs at least one phase");
  }
  if (phases.front().first != 0.0) {
    throw ConfigError("reward.curriculum", "first phase must sit at progress 0");
  }
  if (phases.back().first != 1.0) {
    throw ConfigError("reward.curriculum", "last phase must sit at progress 1");
  }
  for (size_t i = 1; i < phases.size(); ++i) {
    if (!(phases[i - 1].first < phases[i].first)) {
      throw ConfigError("reward.curriculum", "phase fractions must increase strictly");
    }
  }
  for (const auto& [frac, w] : phases) w.validate();
}

CurriculumSchedule CurriculumSchedule::constant(const RewardWeights& w) {
  CurriculumSchedule s;
  s.phases = {{0.0, w}, {1.0, w}};
  return s;
}

CurriculumSchedule CurriculumSchedule::default_schedule(const RewardWeights& full) {
  RewardWeights early = full;
  early.w_l2 *= 0.1;
  early.w_rate *= 0.1;
  early.w_vel *= 0.1;
  CurriculumSchedule s;
  s.phases = {{0.0, early}, {1.0, full}};
  return s;
}

CurriculumSchedule CurriculumSchedule::default_schedule() {
  return default_schedule(RewardWeights{});
}

namespace {

RewardWeights lerp_weights(const RewardWeights& a, const RewardWeights& b, double t) {
  auto mix = [t](double x, double y) { return x + t * (y - x); };
  RewardWeights w;
  w.w_d1 = mix(a.w_d1, b.w_d1);
  w.w_d2 = mix(a.w_d2, b.w_d2);
  w.w_d3 = mix(a.w_d3, b.w_d3);
  w.sigma1 = mix(a.sigma1, b.sigma1);
  w.sigma2 = mix(a.sigma2, b.sigma2);
  w.w_ori = mix(a.w_ori, b.w_ori);
  w.w_l2 = mix(a.w_l2, b.w_l2);
  w.w_rate = mix(a.w_rate, b.w_rate);
  w.w_vel = mix(a.w_vel, b.w_vel);
  return w;
}

}  // namespace

RewardWeights curriculum_weights(const CurriculumSchedule& schedule, double progress) {
  schedule.validate();
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw ContractError("curriculum progress must lie in [0, 1]");
  }
  const auto& phases = schedule.phases;
  if (progress <= phases.front().first) return phases.front().second;
  if (progress >= phases.back().first) return phases.back().second;
  for (size_t i = 1; i < phases.size(); ++i) {
    if (progress <= phases[i].first) {
      const double span = phases[i].first - phases[i - 1].first;
      const double t = (progress - phases[i - 1].first) / span;
      if (t == 0.0) return phases[i - 1].second;
      if (t == 1.0) return phases[i].second;
      return lerp_weights(phases[i - 1].second, phases[i].second, t);
    }
  }
  return phases.back().second;
}

double distance_reward(double d, const RewardWeights& w) {
  if (d < 0.0) throw ContractError("distance_reward: d must be >= 0");
  return w.w_d1 * d + w.w_d2 * (1.0 - std::tanh(d / w.sigma1)) +
         w.w_d3 * (1.0 - std::tanh(d / w.sigma2));
}

double orientation_reward(double theta, const RewardWeights& w) {
  if (theta < 0.0 || theta > kPi + 1e-9) {
    throw ContractError("orientation_reward: theta must lie in [0, pi]");
  }
  return -w.w_ori * theta;
}

double action_reward(const VecX& a, const VecX& a_prev, const VecX& qdot,
                     const RewardWeights& w) {
  if (a.size() != a_prev.size()) {
    throw ContractError("action_reward: action dimensions disagree");
  }
  return -w.w_l2 * a.squaredNorm() - w.w_rate * (a - a_prev).squaredNorm() -
         w.w_vel * qdot.squaredNorm();
}

RewardTerms step_reward_terms(const StepInfo& info, const VecX& a, const VecX& a_prev,
                              const RewardWeights& w) {
  RewardTerms t;
  t.dist = distance_reward(info.distance, w);
  t.ori = orientation_reward(info.angle, w);
  t.act = action_reward(a, a_prev, info.velocities, w);
  return t;
}

double step_reward(const StepInfo& info, const VecX& a, const VecX& a_prev,
                   const RewardWeights& w) {
  const RewardTerms t = step_reward_terms(info, a, a_prev, w);
  return t.dist + t.ori + t.act;
}

void TaskReturnSpec::validate() const {
  if (kind == TaskReturnKind::articulation_progress && !(travel > 0.0)) {
    throw ConfigError("scene.object.travel", "articulation-progress return needs travel > 0");
  }
  if (kind == TaskReturnKind::reach_hold && !(threshold > 0.0)) {
    throw ConfigError("scene.grasp_radius", "reach-hold return needs threshold > 0");
  }
}

double task_return(const std::vector<StepInfo>& trajectory, const TaskReturnSpec& spec) {
  if (trajectory.empty()) throw ContractError("task_return: empty trajectory");
  spec.validate();
  switch (spec.kind) {
    case TaskReturnKind::articulation_progress: {
      const double progress = trajectory.back().articulation / spec.travel;
      return std::clamp(progress, 0.0, 1.0);
    }
    case TaskReturnKind::reach_hold: {
      const size_t n = trajectory.size();
      const size_t start = (3 * n) / 4;
      size_t hits = 0;
      for (size_t i = start; i < n; ++i) {
        if (trajectory[i].distance < spec.threshold) ++hits;
      }
      return static_cast<double>(hits) / static_cast<double>(n - start);
    }
  }
  throw ContractError("task_return: unknown kind");
}

}  // namespace affkit
