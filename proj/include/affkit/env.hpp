#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "affkit/common.hpp"
#include "affkit/kinematics.hpp"

namespace affkit {

enum class ArticulationType { none, prismatic, revolute };
enum class TaskKind { grasping, non_grasping };
enum class GripperState { open, closed };
enum class GripperCommand { hold, open, close };
enum class EncodingMode { trig, raw };

struct ArticulatedObject {
  ArticulationType type = ArticulationType::none;
  Vec3 axis = Vec3::UnitX();  // slide direction (prismatic) or hinge axis (revolute)
  Vec3 origin = Vec3::Zero();  // hinge origin, revolute only
  double travel = 0.0;         // articulation range [0, travel], meters or radians
  Pose handle;                 // handle pose at articulation 0
};

// Where the handle sits once the object has articulated by `coordinate`.
Vec3 handle_position(const ArticulatedObject& object, double coordinate);

struct Scene {
  KinematicChain chain;
  ArticulatedObject object;
  TaskKind task = TaskKind::non_grasping;
  Vec3 true_affordance = Vec3::Zero();
  Vec3 initial_guess = Vec3::Zero();
  Quat target_orientation = Quat::Identity();
  double grasp_radius = 0.04;
  JointVector home;
  int horizon = 300;

  Scene(KinematicChain chain_, ArticulatedObject object_, TaskKind task_,
        const Vec3& true_affordance_, const Vec3& initial_guess_,
        const Quat& target_orientation_, double grasp_radius_,
        JointVector home_, int horizon_);
};

struct DomainRandomizationConfig {
  bool enabled = true;
  double joint_jitter = 0.05;       // std dev, radians
  double velocity_jitter = 0.02;    // std dev, radians/s
  double link_scale_jitter = 0.01;  // relative std dev
  double obs_noise = 0.005;         // std dev on every observation entry
  double keypoint_jitter = 0.005;   // std dev, meters

  void validate() const;
};

// Held-out evaluation-world mismatch; never sampled during training.
struct PerturbationConfig {
  bool enabled = false;
  double link_offset_scale = 0.02;  // uniform relative link-length offset, per episode
  double action_noise = 0.0;        // std dev of per-step execution noise, radians
  double keypoint_error = 0.0;      // std dev of keypoint placement error, meters

  void validate() const;
};

// Global count of draws from the perturbation distributions. Training-path
// assertions check it stays flat.
uint64_t perturbation_draw_count();
void reset_perturbation_draw_count();

inline constexpr int kMaxActionHistory = 4;

struct EnvState {
  JointVector joints;
  VecX velocities;
  MatX action_history;  // kMaxActionHistory rows, newest first
  GripperState gripper = GripperState::open;
  double articulation = 0.0;
  int step_index = 0;
  Vec3 keypoint = Vec3::Zero();  // commanded keypoint after reset-time jitter
  Quat target_orientation = Quat::Identity();
  VecX link_scale;
  uint64_t episode_seed = 0;

  VecX prev_action() const { return action_history.row(0).transpose(); }
};

struct Action {
  VecX delta;
  GripperCommand gripper = GripperCommand::hold;
};

struct StepInfo {
  Pose ee;
  double distance = 0.0;  // end-effector to commanded keypoint
  double angle = 0.0;     // end-effector orientation to target orientation
  double articulation = 0.0;
  VecX velocities;
  VecX applied_delta;
  bool attached = false;
  JointVector joints;  // post-step joint angles
};

struct ObservationSpec {
  EncodingMode encoding = EncodingMode::trig;
  int history = 1;  // previous actions per joint token, 1..kMaxActionHistory

  void validate() const;
};

struct Observation {
  VecX keypoint_token;  // keypoint position + target orientation, width 7
  MatX joint_tokens;    // one row per joint

  int dof() const { return static_cast<int>(joint_tokens.rows()); }
  int joint_width() const { return static_cast<int>(joint_tokens.cols()); }
};

GripperCommand gripper_controller(TaskKind task, bool grasp_keypoint_reached);

class Env {
 public:
  Env(Scene scene, DomainRandomizationConfig dr, PerturbationConfig perturbation);

  const Scene& scene() const { return scene_; }
  const DomainRandomizationConfig& dr() const { return dr_; }
  const PerturbationConfig& perturbation() const { return perturbation_; }

  EnvState reset(const Vec3& keypoint, uint64_t seed) const;
  std::pair<EnvState, StepInfo> step(const EnvState& state, const Action& action) const;
  Observation observe(const EnvState& state, const ObservationSpec& spec,
                      uint64_t seed) const;

 private:
  Scene scene_;
  DomainRandomizationConfig dr_;
  PerturbationConfig perturbation_;
};

}  // namespace affkit
