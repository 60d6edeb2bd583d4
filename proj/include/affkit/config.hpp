#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "affkit/cem.hpp"
#include "affkit/common.hpp"
#include "affkit/env.hpp"
#include "affkit/policy.hpp"
#include "affkit/ppo.hpp"
#include "affkit/reward.hpp"

namespace affkit {

/// Data mirror of one chain link in the scene file schema.
struct LinkConfig {
  double length = 0.0;
  Vec3 axis = Vec3::UnitZ();
  double limit_lo = -kPi;
  double limit_hi = kPi;
  double max_speed = 8.0;  // radians/s
};

struct ObjectConfig {
  ArticulationType type = ArticulationType::none;
  Vec3 axis = Vec3::UnitX();
  Vec3 origin = Vec3::Zero();
  double travel = 0.0;
  Vec3 handle_position = Vec3::Zero();
  Vec3 handle_rotation = Vec3::Zero();  // rotation vector, radians
};

/// Scene section. The defaults describe the 3-DoF planar reach scene used by
/// the end-to-end experiments; orientations are rotation vectors (radians).
struct SceneConfig {
  std::vector<LinkConfig> links = {
      {0.30, Vec3::UnitZ(), -kPi, kPi, 8.0},
      {0.25, Vec3::UnitZ(), -2.8, 2.8, 8.0},
      {0.20, Vec3::UnitZ(), -2.8, 2.8, 8.0},
  };
  Vec3 base_position = Vec3::Zero();
  Vec3 base_rotation = Vec3::Zero();
  TaskKind task = TaskKind::non_grasping;
  ObjectConfig object;
  Vec3 true_affordance = Vec3(0.42, 0.12, 0.0);
  Vec3 initial_guess = Vec3(0.42, 0.12, 0.0);
  Vec3 target_rotation = Vec3(0.0, 0.0, 0.28);
  double grasp_radius = 0.04;
  VecX home = (VecX(3) << -1.515, 2.397, 0.019).finished();
  int horizon = 100;

  Scene to_scene() const;  // builds and validates the domain object
};

/// Reward section: base weights plus the curriculum phases. An absent
/// curriculum key means the default actuation ramp over the base weights.
struct RewardConfig {
  RewardWeights weights;
  CurriculumSchedule curriculum = CurriculumSchedule::default_schedule();
};

enum class AblationCell { full, no_dr, no_te };

std::string to_string(AblationCell cell);

/// Harness section: the training-time domain randomization, the held-out
/// evaluation-world perturbation, and the ablation grid shape.
struct HarnessConfig {
  DomainRandomizationConfig dr;
  PerturbationConfig perturbation{.enabled = true};
  std::vector<AblationCell> cells = {AblationCell::full, AblationCell::no_dr,
                                     AblationCell::no_te};
  std::vector<uint64_t> seeds = {101, 202, 303, 404};
  int trials = 20;

  void validate() const;
};

/// Cem section: optimizer knobs plus the initial search distribution's
/// per-axis standard deviation (the mean starts at the scene's initial
/// guess).
/// What the refinement stage scores candidates against. "rollout" runs the
/// frozen actuator in the simulator (the real pipeline); "synthetic" scores
/// R(x) = 1 - min(1, ||x - true_affordance||) with no actuator involved,
/// which exercises the optimizer against a landscape whose optimum is known
/// in closed form.
enum class CemLandscape { rollout, synthetic };

struct CemSection {
  CemConfig config;
  VecX initial_std = (VecX(3) << 0.03, 0.03, 0.0).finished();
  CemLandscape landscape = CemLandscape::rollout;

  KeypointDistribution initial_space(const Vec3& guess) const;
};

/// Whole experiment file: six sections, every field optional with the
/// defaults above. Unknown keys are rejected with their field path.
struct ExperimentConfig {
  /// The planar default scene cannot leave z = 0, so the default experiment
  /// restricts keypoint sampling to the plane.
  static PpoConfig default_ppo();

  SceneConfig scene;
  RewardConfig reward;
  PolicyConfig policy;
  PpoConfig ppo = default_ppo();
  CemSection cem;
  HarnessConfig harness;

  /// Cross-section checks on top of per-section validation; notably the
  /// training box must cover the CEM search (half-width >= 3x initial std).
  void validate() const;
};

/// Policy section composed with the scene: dof and the per-joint action
/// bound come from the chain, everything else from the policy section.
PolicyConfig composed_policy(const ExperimentConfig& config);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical serialization: every field explicit, keys sorted, 2-space
/// indent. parse_config(serialize_config(c)) reproduces c exactly.
std::string serialize_config(const ExperimentConfig& config);

/// FNV-1a of the canonical serialization; covers every config field.
uint64_t config_fingerprint(const ExperimentConfig& config);

}  // namespace affkit
