#include "affkit/env.hpp"

#include <atomic>
#include <cmath>

#include "affkit/rng.hpp"

namespace affkit {

namespace {

// Stream tags keep reset, observation, and perturbation draws on disjoint
// RNG streams derived from the episode seed.
constexpr uint64_t kResetStream = 0x01;
constexpr uint64_t kPerturbStream = 0x02;
constexpr uint64_t kExecNoiseStream = 0x03;

std::atomic<uint64_t> g_perturbation_draws{0};

}  // namespace

uint64_t perturbation_draw_count() { return g_perturbation_draws.load(); }
void reset_perturbation_draw_count() { g_perturbation_draws.store(0); }

Vec3 handle_position(const ArticulatedObject& object, double coordinate) {
  switch (object.type) {
    case ArticulationType::none:
      return object.handle.position;
    case ArticulationType::prismatic:
      return object.handle.position + object.axis * coordinate;
    case ArticulationType::revolute: {
      const Eigen::AngleAxisd rot(coordinate, object.axis);
      return object.origin + rot * (object.handle.position - object.origin);
    }
  }
  throw ContractError("handle_position: unknown articulation type");
}

Scene::Scene(KinematicChain chain_, ArticulatedObject object_, TaskKind task_,
             const Vec3& true_affordance_, const Vec3& initial_guess_,
             const Quat& target_orientation_, double grasp_radius_,
             JointVector home_, int horizon_)
    : chain(std::move(chain_)),
      object(object_),
      task(task_),
      true_affordance(true_affordance_),
      initial_guess(initial_guess_),
      target_orientation(target_orientation_.normalized()),
      grasp_radius(grasp_radius_),
      home(std::move(home_)),
      horizon(horizon_) {
  if (!(grasp_radius > 0.0)) {
    throw ConfigError("scene.grasp_radius", "must be > 0");
  }
  if ((true_affordance - chain.base().position).norm() > chain.reach()) {
    throw ConfigError("scene.true_affordance", "lies outside the arm's reachable radius");
  }
  if (home.size() != chain.dof()) {
    throw ConfigError("scene.home", "dimension must match chain DoF");
  }
  if (horizon < 1) {
    throw ConfigError("scene.horizon", "must be >= 1");
  }
  if (object.type != ArticulationType::none) {
    if (!(object.travel > 0.0)) {
      throw ConfigError("scene.object.travel", "must be > 0");
    }
    const double axis_norm = object.axis.norm();
    if (!(axis_norm > 1e-12)) {
      throw ConfigError("scene.object.axis", "must be a nonzero vector");
    }
    object.axis /= axis_norm;
  }
}

void DomainRandomizationConfig::validate() const {
  if (joint_jitter < 0 || velocity_jitter < 0 || link_scale_jitter < 0 ||
      obs_noise < 0 || keypoint_jitter < 0) {
    throw ConfigError("harness.domain_randomization", "std-devs must be >= 0");
  }
}

void PerturbationConfig::validate() const {
  if (link_offset_scale < 0 || action_noise < 0 || keypoint_error < 0) {
    throw ConfigError("harness.perturbation", "magnitudes must be >= 0");
  }
}

void ObservationSpec::validate() const {
  if (history < 1 || history > kMaxActionHistory) {
    throw ConfigError("policy.history", "must lie in 1..4");
  }
}

GripperCommand gripper_controller(TaskKind task, bool grasp_keypoint_reached) {
  if (task == TaskKind::non_grasping) return GripperCommand::close;
  return grasp_keypoint_reached ? GripperCommand::close : GripperCommand::open;
}

Env::Env(Scene scene, DomainRandomizationConfig dr, PerturbationConfig perturbation)
    : scene_(std::move(scene)), dr_(dr), perturbation_(perturbation) {
  dr_.validate();
  perturbation_.validate();
}

EnvState Env::reset(const Vec3& keypoint, uint64_t seed) const {
  if (!keypoint.allFinite()) {
    throw ContractError("reset: keypoint must be finite");
  }
  const double radius = (keypoint - scene_.chain.base().position).norm();
  if (radius > scene_.chain.reach() * 1.5) {
    throw OutOfWorkspaceError("reset: keypoint outside 1.5x reachable radius");
  }

  const int dof = scene_.chain.dof();
  EnvState s;
  s.episode_seed = seed;
  s.joints = scene_.home;
  s.velocities = VecX::Zero(dof);
  s.link_scale = VecX::Ones(dof);
  s.keypoint = keypoint;
  s.target_orientation = scene_.target_orientation;
  s.action_history = MatX::Zero(kMaxActionHistory, dof);
  s.articulation = 0.0;
  s.step_index = 0;
  s.gripper = scene_.task == TaskKind::grasping ? GripperState::open : GripperState::closed;

  if (dr_.enabled) {
    Rng rng(derive_seed({seed, kResetStream}));
    s.joints += rng.normal_vector(dof) * dr_.joint_jitter;
    s.joints = scene_.chain.clamp_to_limits(s.joints);
    s.velocities += rng.normal_vector(dof) * dr_.velocity_jitter;
    for (int i = 0; i < dof; ++i) {
      s.link_scale[i] = std::max(0.1, 1.0 + rng.normal() * dr_.link_scale_jitter);
    }
    s.keypoint += Vec3(rng.normal(), rng.normal(), rng.normal()) * dr_.keypoint_jitter;
  }

  if (perturbation_.enabled) {
    Rng rng(derive_seed({seed, kPerturbStream}));
    for (int i = 0; i < dof; ++i) {
      s.link_scale[i] *= 1.0 + rng.uniform(-perturbation_.link_offset_scale,
                                           perturbation_.link_offset_scale);
    }
    g_perturbation_draws.fetch_add(1);
    if (perturbation_.keypoint_error > 0.0) {
      s.keypoint += Vec3(rng.normal(), rng.normal(), rng.normal()) *
                    perturbation_.keypoint_error;
      g_perturbation_draws.fetch_add(1);
    }
  }
  return s;
}

std::pair<EnvState, StepInfo> Env::step(const EnvState& state, const Action& action) const {
  const int dof = scene_.chain.dof();
  if (action.delta.size() != dof) {
    throw ContractError("step: action dimension mismatch");
  }
  if (state.step_index >= scene_.horizon) {
    throw ContractError("step: episode horizon exhausted");
  }

  const VecX bound = scene_.chain.step_bound();
  VecX desired = action.delta.cwiseMin(bound).cwiseMax(-bound);

  VecX executed = desired;
  if (perturbation_.enabled && perturbation_.action_noise > 0.0) {
    Rng rng(derive_seed({state.episode_seed, kExecNoiseStream,
                         static_cast<uint64_t>(state.step_index)}));
    executed += rng.normal_vector(dof) * perturbation_.action_noise;
    g_perturbation_draws.fetch_add(1);
  }

  EnvState next = state;
  next.joints = scene_.chain.clamp_to_limits(state.joints + executed);
  const VecX applied = next.joints - state.joints;
  next.velocities = applied * kControlHz;
  next.step_index = state.step_index + 1;

  switch (action.gripper) {
    case GripperCommand::hold: break;
    case GripperCommand::open: next.gripper = GripperState::open; break;
    case GripperCommand::close: next.gripper = GripperState::closed; break;
  }

  const Pose ee_old = forward_kinematics_scaled(scene_.chain, state.joints, state.link_scale);
  const Pose ee_new = forward_kinematics_scaled(scene_.chain, next.joints, next.link_scale);

  bool attached = false;
  if (scene_.object.type != ArticulationType::none &&
      next.gripper == GripperState::closed) {
    const Vec3 handle = handle_position(scene_.object, state.articulation);
    if ((ee_new.position - handle).norm() <= scene_.grasp_radius) {
      attached = true;
      const Vec3 motion = ee_new.position - ee_old.position;
      double delta = 0.0;
      if (scene_.object.type == ArticulationType::prismatic) {
        delta = motion.dot(scene_.object.axis);
      } else {
        const Vec3 arm = handle - scene_.object.origin;
        const double radius = arm.norm();
        if (radius > 1e-9) {
          const Vec3 tangent = scene_.object.axis.cross(arm).normalized();
          delta = motion.dot(tangent) / radius;
        }
      }
      next.articulation =
          std::clamp(state.articulation + delta, 0.0, scene_.object.travel);
    }
  }

  // Newest action first; observation history slices read rows 0..h-1.
  for (int r = kMaxActionHistory - 1; r > 0; --r) {
    next.action_history.row(r) = state.action_history.row(r - 1);
  }
  next.action_history.row(0) = desired.transpose();

  StepInfo info;
  info.ee = ee_new;
  info.distance = (ee_new.position - state.keypoint).norm();
  info.angle = geodesic_angle(ee_new.orientation, state.target_orientation);
  info.articulation = next.articulation;
  info.velocities = next.velocities;
  info.applied_delta = applied;
  info.attached = attached;
  info.joints = next.joints;
  return {std::move(next), info};
}

Observation Env::observe(const EnvState& state, const ObservationSpec& spec,
                         uint64_t seed) const {
  spec.validate();
  const int dof = scene_.chain.dof();
  const int enc_width = spec.encoding == EncodingMode::trig ? 2 : 1;

  Observation obs;
  obs.keypoint_token.resize(7);
  obs.keypoint_token << state.keypoint.x(), state.keypoint.y(), state.keypoint.z(),
      state.target_orientation.w(), state.target_orientation.x(),
      state.target_orientation.y(), state.target_orientation.z();

  obs.joint_tokens.resize(dof, enc_width + spec.history);
  for (int i = 0; i < dof; ++i) {
    if (spec.encoding == EncodingMode::trig) {
      obs.joint_tokens(i, 0) = std::sin(state.joints[i]);
      obs.joint_tokens(i, 1) = std::cos(state.joints[i]);
    } else {
      obs.joint_tokens(i, 0) = state.joints[i];
    }
    for (int h = 0; h < spec.history; ++h) {
      obs.joint_tokens(i, enc_width + h) = state.action_history(h, i);
    }
  }

  if (dr_.enabled && dr_.obs_noise > 0.0) {
    Rng rng(seed);
    for (int i = 0; i < obs.keypoint_token.size(); ++i) {
      obs.keypoint_token[i] += rng.normal() * dr_.obs_noise;
    }
    for (int i = 0; i < obs.joint_tokens.rows(); ++i) {
      for (int j = 0; j < obs.joint_tokens.cols(); ++j) {
        obs.joint_tokens(i, j) += rng.normal() * dr_.obs_noise;
      }
    }
  }
  return obs;
}

}  // namespace affkit
