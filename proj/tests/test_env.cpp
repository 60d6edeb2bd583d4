#include "doctest.h"

#include <cmath>
#include <vector>

#include "affkit/env.hpp"
#include "affkit/rng.hpp"

using namespace affkit;

namespace {

KinematicChain planar_chain(int dof = 2) {
  std::vector<LinkSpec> links(dof);
  for (auto& l : links) {
    l.length = 1.0;
    l.axis = Vec3::UnitZ();
    l.limit_lo = -kPi;
    l.limit_hi = kPi;
    l.max_speed = 1.0;
  }
  return KinematicChain(links, Pose{});
}

Scene reach_scene(int dof = 2) {
  return Scene(planar_chain(dof), ArticulatedObject{}, TaskKind::non_grasping,
               Vec3(1.0, 0.5, 0.0), Vec3(1.0, 0.5, 0.0), Quat::Identity(), 0.04,
               JointVector::Zero(dof), 50);
}

Scene drawer_scene(TaskKind task = TaskKind::non_grasping) {
  ArticulatedObject drawer;
  drawer.type = ArticulationType::prismatic;
  drawer.axis = Vec3(-1.0, 0.0, 0.0);
  drawer.travel = 0.12;
  drawer.handle = Pose(Vec3(2.0, 0.0, 0.0), Quat::Identity());
  return Scene(planar_chain(2), drawer, task, Vec3(2.0, 0.0, 0.0),
               Vec3(2.0, 0.0, 0.0), Quat::Identity(), 0.04, JointVector::Zero(2), 50);
}

DomainRandomizationConfig no_dr() {
  DomainRandomizationConfig dr;
  dr.enabled = false;
  return dr;
}

bool states_equal(const EnvState& a, const EnvState& b) {
  return a.joints == b.joints && a.velocities == b.velocities &&
         a.link_scale == b.link_scale && a.keypoint == b.keypoint &&
         a.articulation == b.articulation && a.step_index == b.step_index &&
         a.gripper == b.gripper && a.action_history == b.action_history;
}

}  // namespace

TEST_CASE("env reset: nominal home without randomization") {
  Env env(reach_scene(), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 3);
  CHECK(s.joints == JointVector::Zero(2));
  CHECK(s.velocities == VecX::Zero(2));
  CHECK(s.link_scale == VecX::Ones(2));
  CHECK(s.keypoint == Vec3(1.0, 0.5, 0.0));
  CHECK(s.articulation == 0.0);
  CHECK(s.step_index == 0);
  CHECK(s.gripper == GripperState::closed);
}

TEST_CASE("env reset: identical seed gives bitwise-identical state") {
  DomainRandomizationConfig dr;
  dr.enabled = true;
  Env env(reach_scene(), dr, PerturbationConfig{});
  EnvState a = env.reset(Vec3(1.0, 0.5, 0.0), 1234);
  EnvState b = env.reset(Vec3(1.0, 0.5, 0.0), 1234);
  CHECK(states_equal(a, b));
  EnvState c = env.reset(Vec3(1.0, 0.5, 0.0), 1235);
  CHECK_FALSE(states_equal(a, c));
}

TEST_CASE("env reset: joint jitter statistics match the configured std") {
  DomainRandomizationConfig dr;
  dr.enabled = true;
  dr.joint_jitter = 0.05;
  dr.velocity_jitter = 0.0;
  dr.link_scale_jitter = 0.0;
  dr.keypoint_jitter = 0.0;
  Env env(reach_scene(), dr, PerturbationConfig{});

  const int n = 10000;
  for (int joint = 0; joint < 2; ++joint) {
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), static_cast<uint64_t>(i));
      sum += s.joints[joint];
      sumsq += s.joints[joint] * s.joints[joint];
    }
    const double mean = sum / n;
    const double std = std::sqrt(sumsq / n - mean * mean);
    CHECK(std == doctest::Approx(0.05).epsilon(0.05));
  }
}

TEST_CASE("env reset: rejects keypoints far outside the workspace") {
  Env env(reach_scene(), no_dr(), PerturbationConfig{});
  CHECK_THROWS_AS(env.reset(Vec3(10.0, 0.0, 0.0), 1), OutOfWorkspaceError);
  // 1.5x the reach is the cutoff; just inside is accepted.
  CHECK_NOTHROW(env.reset(Vec3(2.99, 0.0, 0.0), 1));
  CHECK_THROWS_AS(env.reset(Vec3(3.01, 0.0, 0.0), 1), OutOfWorkspaceError);
}

TEST_CASE("env step: zero action leaves joints still") {
  Env env(reach_scene(), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  auto [next, info] = env.step(s, Action{VecX::Zero(2), GripperCommand::hold});
  CHECK(next.joints == s.joints);
  CHECK(next.velocities == VecX::Zero(2));
  CHECK(info.applied_delta == VecX::Zero(2));
  CHECK(next.step_index == 1);
}

TEST_CASE("env step: deltas clip to the per-step bound") {
  Env env(reach_scene(), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  VecX big(2);
  big << 1.0, -1.0;
  auto [next, info] = env.step(s, Action{big, GripperCommand::hold});
  // max_speed 1.0 rad/s at 20 Hz
  CHECK(info.applied_delta[0] == 0.05);
  CHECK(info.applied_delta[1] == -0.05);
  CHECK(next.joints[0] == 0.05);
}

TEST_CASE("env step: velocity equals applied delta times the control rate") {
  Env env(reach_scene(), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    VecX delta = rng.normal_vector(2) * 0.1;
    auto [next, info] = env.step(s, Action{delta, GripperCommand::hold});
    CHECK((info.velocities - info.applied_delta * 20.0).norm() <= 1e-12);
    s = next;
  }
}

TEST_CASE("env step: joints never leave their limits") {
  std::vector<LinkSpec> links(2);
  for (auto& l : links) {
    l.length = 1.0;
    l.axis = Vec3::UnitZ();
    l.limit_lo = -0.3;
    l.limit_hi = 0.3;
    l.max_speed = 4.0;
  }
  Scene scene(KinematicChain(links, Pose{}), ArticulatedObject{},
              TaskKind::non_grasping, Vec3(1.0, 0.5, 0.0), Vec3(1.0, 0.5, 0.0),
              Quat::Identity(), 0.04, JointVector::Zero(2), 200);
  Env env(scene, no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  VecX push(2);
  push << 10.0, 10.0;
  for (int i = 0; i < 10; ++i) {
    auto [next, info] = env.step(s, Action{push, GripperCommand::hold});
    s = next;
    CHECK(s.joints[0] <= 0.3);
    CHECK(s.joints[1] <= 0.3);
  }
  CHECK(s.joints[0] == doctest::Approx(0.3));
  // At the limit the applied delta collapses to zero.
  auto [next, info] = env.step(s, Action{push, GripperCommand::hold});
  CHECK(info.applied_delta[0] == 0.0);
  CHECK(info.velocities[0] == 0.0);
}

TEST_CASE("env step: drawer articulation follows the projected pull") {
  Env env(drawer_scene(), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(2.0, 0.0, 0.0), 5);
  REQUIRE(s.gripper == GripperState::closed);

  VecX delta(2);
  delta << 0.01, -0.02;
  auto [next, info] = env.step(s, Action{delta, GripperCommand::hold});

  // Independent projection: the pull equals the drop in the x coordinate.
  const double x_new = std::cos(0.01) + std::cos(0.01 - 0.02);
  const double expected = 2.0 - x_new;
  REQUIRE(expected > 0.0);
  CHECK(info.attached);
  CHECK(next.articulation == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("env step: open gripper never moves the articulation") {
  Env env(drawer_scene(TaskKind::grasping), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(2.0, 0.0, 0.0), 5);
  REQUIRE(s.gripper == GripperState::open);
  VecX delta(2);
  delta << 0.01, -0.02;
  auto [next, info] = env.step(s, Action{delta, GripperCommand::hold});
  CHECK_FALSE(info.attached);
  CHECK(next.articulation == 0.0);
}

TEST_CASE("env step: attachment requires proximity to the handle") {
  ArticulatedObject drawer;
  drawer.type = ArticulationType::prismatic;
  drawer.axis = Vec3(-1.0, 0.0, 0.0);
  drawer.travel = 0.12;
  drawer.handle = Pose(Vec3(0.5, 1.2, 0.0), Quat::Identity());
  Scene scene(planar_chain(2), drawer, TaskKind::non_grasping, Vec3(0.5, 1.2, 0.0),
              Vec3(0.5, 1.2, 0.0), Quat::Identity(), 0.04, JointVector::Zero(2), 50);
  Env env(scene, no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(0.5, 1.2, 0.0), 5);
  // End-effector starts at (2, 0, 0), far from the handle.
  VecX delta(2);
  delta << 0.01, -0.02;
  auto [next, info] = env.step(s, Action{delta, GripperCommand::hold});
  CHECK_FALSE(info.attached);
  CHECK(next.articulation == 0.0);
}

TEST_CASE("env step: articulation clamps to its travel limits") {
  Env env(drawer_scene(), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(2.0, 0.0, 0.0), 5);
  VecX pull(2);
  pull << 0.05, -0.1;
  for (int i = 0; i < 40 && s.step_index < 40; ++i) {
    auto [next, info] = env.step(s, Action{pull, GripperCommand::hold});
    s = next;
    CHECK(s.articulation >= 0.0);
    CHECK(s.articulation <= 0.12);
    if (!info.attached) break;
  }

  // Pushing the other way can never drive the coordinate negative.
  EnvState t = env.reset(Vec3(2.0, 0.0, 0.0), 6);
  VecX push(2);
  push << -0.05, 0.1;
  auto [next2, info2] = env.step(t, Action{push, GripperCommand::hold});
  CHECK(next2.articulation == 0.0);
}

TEST_CASE("gripper_controller: quoted task rules") {
  CHECK(gripper_controller(TaskKind::grasping, false) == GripperCommand::open);
  CHECK(gripper_controller(TaskKind::grasping, true) == GripperCommand::close);
  CHECK(gripper_controller(TaskKind::non_grasping, false) == GripperCommand::close);
  CHECK(gripper_controller(TaskKind::non_grasping, true) == GripperCommand::close);
}

TEST_CASE("env step: gripper commands switch the state") {
  Env env(drawer_scene(TaskKind::grasping), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(2.0, 0.0, 0.0), 5);
  CHECK(s.gripper == GripperState::open);
  auto [s1, i1] = env.step(s, Action{VecX::Zero(2), GripperCommand::close});
  CHECK(s1.gripper == GripperState::closed);
  auto [s2, i2] = env.step(s1, Action{VecX::Zero(2), GripperCommand::hold});
  CHECK(s2.gripper == GripperState::closed);
  auto [s3, i3] = env.step(s2, Action{VecX::Zero(2), GripperCommand::open});
  CHECK(s3.gripper == GripperState::open);
}

TEST_CASE("env step: refuses to run past the horizon") {
  Scene scene = reach_scene();
  Env env(scene, no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  for (int i = 0; i < scene.horizon; ++i) {
    auto [next, info] = env.step(s, Action{VecX::Zero(2), GripperCommand::hold});
    s = next;
  }
  CHECK_THROWS_AS(env.step(s, Action{VecX::Zero(2), GripperCommand::hold}),
                  ContractError);
}

TEST_CASE("env observe: token layout in trig mode") {
  Env env(reach_scene(3), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  s.joints << 0.0, 0.4, -1.1;

  ObservationSpec spec;
  spec.encoding = EncodingMode::trig;
  spec.history = 2;
  Observation obs = env.observe(s, spec, 0);

  REQUIRE(obs.keypoint_token.size() == 7);
  CHECK(obs.keypoint_token[0] == 1.0);
  CHECK(obs.keypoint_token[1] == 0.5);
  CHECK(obs.keypoint_token[2] == 0.0);
  CHECK(obs.keypoint_token[3] == 1.0);  // identity quaternion, w first
  CHECK(obs.keypoint_token[4] == 0.0);

  REQUIRE(obs.dof() == 3);
  REQUIRE(obs.joint_width() == 4);
  CHECK(obs.joint_tokens(0, 0) == 0.0);
  CHECK(obs.joint_tokens(0, 1) == 1.0);
  CHECK(obs.joint_tokens(1, 0) == doctest::Approx(std::sin(0.4)).epsilon(1e-15));
  CHECK(obs.joint_tokens(1, 1) == doctest::Approx(std::cos(0.4)).epsilon(1e-15));
  CHECK(obs.joint_tokens(2, 0) == doctest::Approx(std::sin(-1.1)).epsilon(1e-15));
  // Empty history reads as zeros.
  CHECK(obs.joint_tokens(0, 2) == 0.0);
  CHECK(obs.joint_tokens(0, 3) == 0.0);
}

TEST_CASE("env observe: raw mode narrows the joint tokens") {
  Env env(reach_scene(3), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  s.joints << 0.2, 0.4, -1.1;

  ObservationSpec spec;
  spec.encoding = EncodingMode::raw;
  spec.history = 1;
  Observation obs = env.observe(s, spec, 0);
  REQUIRE(obs.joint_width() == 2);
  CHECK(obs.joint_tokens(0, 0) == 0.2);
  CHECK(obs.joint_tokens(2, 0) == -1.1);
}

TEST_CASE("env observe: action history lands in the joint tokens newest-first") {
  Env env(reach_scene(2), no_dr(), PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);
  VecX a1(2), a2(2);
  a1 << 0.01, -0.01;
  a2 << 0.02, 0.03;
  auto [s1, i1] = env.step(s, Action{a1, GripperCommand::hold});
  auto [s2, i2] = env.step(s1, Action{a2, GripperCommand::hold});

  ObservationSpec spec;
  spec.history = 2;
  Observation obs = env.observe(s2, spec, 0);
  CHECK(obs.joint_tokens(0, 2) == 0.02);
  CHECK(obs.joint_tokens(0, 3) == 0.01);
  CHECK(obs.joint_tokens(1, 2) == 0.03);
  CHECK(obs.joint_tokens(1, 3) == -0.01);
  CHECK(s2.prev_action()[0] == 0.02);
}

TEST_CASE("env observe: noise statistics match the configured std") {
  DomainRandomizationConfig dr;
  dr.enabled = true;
  dr.joint_jitter = 0.0;
  dr.velocity_jitter = 0.0;
  dr.link_scale_jitter = 0.0;
  dr.keypoint_jitter = 0.0;
  dr.obs_noise = 0.01;
  Env env(reach_scene(2), dr, PerturbationConfig{});
  EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 5);

  ObservationSpec spec;
  const int n = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    Observation obs = env.observe(s, spec, static_cast<uint64_t>(i));
    const double dev = obs.keypoint_token[0] - 1.0;
    sum += dev;
    sumsq += dev * dev;
  }
  const double mean = sum / n;
  const double std = std::sqrt(sumsq / n - mean * mean);
  CHECK(std == doctest::Approx(0.01).epsilon(0.05));

  Observation a = env.observe(s, spec, 77);
  Observation b = env.observe(s, spec, 77);
  CHECK(a.keypoint_token == b.keypoint_token);
  CHECK(a.joint_tokens == b.joint_tokens);
}

TEST_CASE("env: full rollouts are seed-deterministic") {
  DomainRandomizationConfig dr;
  dr.enabled = true;
  PerturbationConfig pert;
  pert.enabled = true;
  pert.action_noise = 0.002;
  pert.keypoint_error = 0.01;
  Env env(reach_scene(2), dr, pert);

  auto run = [&env]() {
    EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), 999);
    Rng rng(4);
    VecX last;
    for (int i = 0; i < 30; ++i) {
      auto [next, info] = env.step(s, Action{rng.normal_vector(2) * 0.05,
                                             GripperCommand::hold});
      s = next;
      last = s.joints;
    }
    return std::make_pair(s, last);
  };
  auto [sa, ja] = run();
  auto [sb, jb] = run();
  CHECK(states_equal(sa, sb));
  CHECK(ja == jb);
}

TEST_CASE("env: perturbation draws are counted and absent in training mode") {
  reset_perturbation_draw_count();

  DomainRandomizationConfig dr;
  dr.enabled = true;
  Env train_env(reach_scene(2), dr, PerturbationConfig{});
  EnvState s = train_env.reset(Vec3(1.0, 0.5, 0.0), 1);
  for (int i = 0; i < 10; ++i) {
    auto [next, info] = train_env.step(s, Action{VecX::Zero(2), GripperCommand::hold});
    s = next;
  }
  CHECK(perturbation_draw_count() == 0);

  PerturbationConfig pert;
  pert.enabled = true;
  pert.action_noise = 0.002;
  pert.keypoint_error = 0.01;
  Env eval_env(reach_scene(2), dr, pert);
  EnvState t = eval_env.reset(Vec3(1.0, 0.5, 0.0), 1);
  auto [t1, info] = eval_env.step(t, Action{VecX::Zero(2), GripperCommand::hold});
  CHECK(perturbation_draw_count() > 0);
  reset_perturbation_draw_count();
}

TEST_CASE("env: perturbed link scales stay within the configured band") {
  PerturbationConfig pert;
  pert.enabled = true;
  pert.link_offset_scale = 0.02;
  Env env(reach_scene(2), no_dr(), pert);
  for (int i = 0; i < 100; ++i) {
    EnvState s = env.reset(Vec3(1.0, 0.5, 0.0), static_cast<uint64_t>(i));
    for (int j = 0; j < 2; ++j) {
      CHECK(s.link_scale[j] >= 0.98);
      CHECK(s.link_scale[j] <= 1.02);
    }
  }
  reset_perturbation_draw_count();
}

TEST_CASE("scene: construction contracts") {
  CHECK_THROWS_AS(Scene(planar_chain(2), ArticulatedObject{}, TaskKind::non_grasping,
                        Vec3(5.0, 0.0, 0.0), Vec3(1.0, 0.0, 0.0), Quat::Identity(),
                        0.04, JointVector::Zero(2), 50),
                  ConfigError);
  CHECK_THROWS_AS(Scene(planar_chain(2), ArticulatedObject{}, TaskKind::non_grasping,
                        Vec3(1.0, 0.0, 0.0), Vec3(1.0, 0.0, 0.0), Quat::Identity(),
                        0.0, JointVector::Zero(2), 50),
                  ConfigError);
  CHECK_THROWS_AS(Scene(planar_chain(2), ArticulatedObject{}, TaskKind::non_grasping,
                        Vec3(1.0, 0.0, 0.0), Vec3(1.0, 0.0, 0.0), Quat::Identity(),
                        0.04, JointVector::Zero(3), 50),
                  ConfigError);
}

TEST_CASE("handle_position: prismatic slide and revolute swing") {
  ArticulatedObject drawer;
  drawer.type = ArticulationType::prismatic;
  drawer.axis = Vec3(0.0, 1.0, 0.0);
  drawer.handle = Pose(Vec3(1.0, 0.0, 0.0), Quat::Identity());
  CHECK((handle_position(drawer, 0.1) - Vec3(1.0, 0.1, 0.0)).norm() <= 1e-15);

  ArticulatedObject door;
  door.type = ArticulationType::revolute;
  door.axis = Vec3::UnitZ();
  door.origin = Vec3::Zero();
  door.handle = Pose(Vec3(1.0, 0.0, 0.0), Quat::Identity());
  CHECK((handle_position(door, kPi / 2.0) - Vec3(0.0, 1.0, 0.0)).norm() <= 1e-12);
}
