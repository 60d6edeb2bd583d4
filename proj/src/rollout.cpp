#include "affkit/rollout.hpp"

#include "affkit/kinematics.hpp"
#include "affkit/rng.hpp"

namespace affkit {
namespace {

constexpr uint64_t kResetTag = 0x11;
constexpr uint64_t kObsTag = 0x12;
constexpr uint64_t kActTag = 0x13;

}  // namespace

EpisodeResult run_episode(const Env& env, const PolicyParams& params,
                          const EpisodeConfig& cfg, const Vec3& keypoint,
                          uint64_t seed) {
  if (cfg.with_reward) cfg.weights.validate();
  const Scene& scene = env.scene();
  EnvState state = env.reset(keypoint, derive_seed({seed, kResetTag}));

  EpisodeResult out;
  out.trajectory.reserve(static_cast<size_t>(scene.horizon));

  Pose ee = forward_kinematics_scaled(scene.chain, state.joints, state.link_scale);
  bool reached = (ee.position - state.keypoint).norm() <= scene.grasp_radius;

  for (int t = 0; t < scene.horizon; ++t) {
    Observation obs =
        env.observe(state, cfg.obs_spec, derive_seed({seed, kObsTag, static_cast<uint64_t>(t)}));
    ForwardResult fwd = policy_forward(params, {obs});

    Action action;
    if (cfg.stochastic) {
      SampledAction sampled =
          sample_action(fwd.mean.col(0), fwd.logstd, params.config.action_bound,
                        derive_seed({seed, kActTag, static_cast<uint64_t>(t)}));
      action.delta = sampled.action;
    } else {
      action.delta = fwd.mean.col(0);
    }
    action.gripper = gripper_controller(scene.task, reached);

    VecX prev = state.prev_action();
    auto [next, info] = env.step(state, action);
    reached = reached || info.distance <= scene.grasp_radius;

    if (cfg.with_reward) {
      out.reward_sum += step_reward(info, next.prev_action(), prev, cfg.weights);
    }
    out.trajectory.push_back(info);
    state = std::move(next);
  }

  out.final_distance = out.trajectory.back().distance;
  out.final_angle = out.trajectory.back().angle;
  out.grasp_reached = reached;
  return out;
}

}  // namespace affkit
