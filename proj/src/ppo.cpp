#include "affkit/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <utility>
#include <vector>

#include "affkit/kinematics.hpp"
#include "affkit/parallel.hpp"
#include "affkit/rng.hpp"
#include "affkit/rollout.hpp"

namespace affkit {
namespace {

constexpr uint64_t kInitTag = 0x20;
constexpr uint64_t kEnvResetTag = 0x21;
constexpr uint64_t kKeypointTag = 0x22;
constexpr uint64_t kObsTag = 0x23;
constexpr uint64_t kActTag = 0x24;
constexpr uint64_t kUpdateTag = 0x25;
constexpr uint64_t kEvalTag = 0x26;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Fixed chunk widths keep batched results independent of the worker count.
constexpr int kForwardChunk = 4;
constexpr int kGradChunk = 16;

void check_buffer(const RolloutBuffer& buffer, int dof) {
  if (buffer.size() <= 0) throw ContractError("ppo: empty rollout buffer");
  const auto n = static_cast<Eigen::Index>(buffer.size());
  if (static_cast<Eigen::Index>(buffer.observations.size()) != n ||
      buffer.actions.cols() != n || buffer.log_probs.size() != n ||
      buffer.rewards.size() != n || buffer.values.size() != n ||
      static_cast<Eigen::Index>(buffer.done.size()) != n ||
      buffer.bootstrap_values.size() != buffer.num_envs) {
    throw ContractError("ppo: rollout buffer fields disagree on sample count");
  }
  if (dof > 0 && buffer.actions.rows() != dof)
    throw ContractError("ppo: action dimension does not match the policy");
}

void zero_like(const PolicyParams& params, GradMap* out) {
  for (const auto& [name, tensor] : params.tensors)
    (*out)[name] = MatX::Zero(tensor.rows(), tensor.cols());
}

double global_grad_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void adam_step(PolicyParams* params, const GradMap& grads, AdamState* adam,
               double lr) {
  if (adam->m.empty()) {
    zero_like(*params, &adam->m);
    zero_like(*params, &adam->v);
  }
  adam->t += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam->t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam->t));
  for (auto& [name, tensor] : params->tensors) {
    const MatX& g = grads.at(name);
    MatX& m = adam->m.at(name);
    MatX& v = adam->v.at(name);
    m = (kAdamBeta1 * m + (1.0 - kAdamBeta1) * g).eval();
    v = (kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.array().square().matrix()).eval();
    tensor -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + kAdamEps))
                  .matrix();
  }
}

}  // namespace

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ConfigError("ppo.gamma", "must lie in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("ppo.lambda", "must lie in [0, 1]");
  if (!(clip_ratio > 0.0)) throw ConfigError("ppo.clip_ratio", "must be positive");
  if (epochs < 1) throw ConfigError("ppo.epochs", "must be at least 1");
  if (minibatch_size < 1)
    throw ConfigError("ppo.minibatch_size", "must be at least 1");
  if (!(learning_rate > 0.0))
    throw ConfigError("ppo.learning_rate", "must be positive");
  if (entropy_coef < 0.0)
    throw ConfigError("ppo.entropy_coef", "must be non-negative");
  if (value_coef < 0.0) throw ConfigError("ppo.value_coef", "must be non-negative");
  if (!(grad_clip > 0.0)) throw ConfigError("ppo.grad_clip", "must be positive");
  if (rollout_steps < 1)
    throw ConfigError("ppo.rollout_steps", "must be at least 1");
  if (num_envs < 1) throw ConfigError("ppo.num_envs", "must be at least 1");
  if (total_updates < 0)
    throw ConfigError("ppo.total_updates", "must be non-negative");
  if (!(keypoint_halfwidth.array() >= 0.0).all())
    throw ConfigError("ppo.keypoint_halfwidth", "entries must be non-negative");
  if (eval_every < 0) throw ConfigError("ppo.eval_every", "must be non-negative");
  if (eval_episodes < 1)
    throw ConfigError("ppo.eval_episodes", "must be at least 1");
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda) {
  check_buffer(buffer, 0);
  const int n = buffer.size();
  GaeResult out;
  out.advantages = VecX::Zero(n);
  out.returns = VecX::Zero(n);
  for (int e = 0; e < buffer.num_envs; ++e) {
    double acc = 0.0;
    double next_value = buffer.bootstrap_values(e);
    for (int t = buffer.steps - 1; t >= 0; --t) {
      const int idx = e * buffer.steps + t;
      const double nonterminal = buffer.done[idx] ? 0.0 : 1.0;
      const double delta = buffer.rewards(idx) +
                           gamma * next_value * nonterminal - buffer.values(idx);
      acc = delta + gamma * lambda * nonterminal * acc;
      out.advantages(idx) = acc;
      next_value = buffer.values(idx);
    }
  }
  out.returns = out.advantages + buffer.values;
  return out;
}

VecX normalize_advantages(const VecX& advantages) {
  if (advantages.size() == 0)
    throw ContractError("normalize_advantages: empty input");
  const double mean = advantages.mean();
  const double sd =
      std::sqrt((advantages.array() - mean).square().sum() /
                static_cast<double>(advantages.size()));
  return ((advantages.array() - mean) / (sd + 1e-8)).matrix();
}

Vec3 sample_training_keypoint(const Vec3& guess, const Vec3& halfwidth,
                              uint64_t seed) {
  if (!(halfwidth.array() >= 0.0).all())
    throw ContractError("sample_training_keypoint: negative half-width");
  Rng rng(seed);
  Vec3 out;
  for (int i = 0; i < 3; ++i)
    out(i) = rng.uniform(guess(i) - halfwidth(i), guess(i) + halfwidth(i));
  return out;
}

UpdateMetrics ppo_update(PolicyParams& params, const RolloutBuffer& buffer,
                         const PpoConfig& config, double lr_now,
                         AdamState& adam, uint64_t seed) {
  config.validate();
  check_buffer(buffer, params.config.dof);
  if (!(lr_now > 0.0)) throw ContractError("ppo_update: lr must be positive");

  const int n = buffer.size();
  const int dof = params.config.dof;

  const GaeResult gae = compute_gae(buffer, config.gamma, config.lambda);
  VecX adv;
  bool finite = gae.advantages.allFinite() && gae.returns.allFinite();
  if (finite) adv = normalize_advantages(gae.advantages);

  const PolicyParams params_snapshot = params;
  const AdamState adam_snapshot = adam;

  UpdateMetrics metrics;
  metrics.lr = lr_now;
  int passes = 0;

  for (int epoch = 0; finite && epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed({seed, static_cast<uint64_t>(epoch)}));
    const std::vector<int> perm = shuffle_rng.permutation(n);

    for (int start = 0; finite && start < n; start += config.minibatch_size) {
      const int count = std::min(config.minibatch_size, n - start);
      const double inv_count = 1.0 / static_cast<double>(count);
      const VecX sigma = params.at("log_std").col(0).array().exp().matrix();
      const double entropy = gaussian_entropy(params.at("log_std").col(0));

      struct ChunkResult {
        GradMap grads;
        double surrogate = 0.0;
        double value_loss = 0.0;
        double kl = 0.0;
        int clipped = 0;
        bool ok = false;
      };
      const int chunks = (count + kGradChunk - 1) / kGradChunk;
      std::vector<ChunkResult> results(static_cast<size_t>(chunks));

      parallel_chunks(count, kGradChunk, config.jobs, [&](int c, int lo, int hi) {
        ChunkResult& out = results[static_cast<size_t>(c)];
        const int m = hi - lo;
        std::vector<Observation> obs(static_cast<size_t>(m));
        MatX actions(dof, m);
        VecX logp_old(m), c_adv(m), c_ret(m);
        for (int i = 0; i < m; ++i) {
          const int idx = perm[static_cast<size_t>(start + lo + i)];
          obs[static_cast<size_t>(i)] = buffer.observations[static_cast<size_t>(idx)];
          actions.col(i) = buffer.actions.col(idx);
          logp_old(i) = buffer.log_probs(idx);
          c_adv(i) = adv(idx);
          c_ret(i) = gae.returns(idx);
        }
        try {
          ForwardCache cache;
          const ForwardResult fwd = policy_forward(params, obs, &cache);
          const VecX logp_new = log_prob_batch(fwd.mean, fwd.logstd, actions);
          const VecX ratio = (logp_new - logp_old).array().exp().matrix();

          LossGrad grad;
          grad.dmean = MatX::Zero(dof, m);
          grad.dvalue = VecX::Zero(m);
          grad.dlogstd = VecX::Zero(dof);

          for (int i = 0; i < m; ++i) {
            const double a = c_adv(i);
            const double unclipped = ratio(i) * a;
            const double clamped =
                std::clamp(ratio(i), 1.0 - config.clip_ratio,
                           1.0 + config.clip_ratio) *
                a;
            out.surrogate += std::min(unclipped, clamped);
            out.kl += logp_old(i) - logp_new(i);
            if (std::abs(ratio(i) - 1.0) > config.clip_ratio) ++out.clipped;

            // Gradient flows through logp only on the unclipped branch.
            const double dlogp =
                unclipped <= clamped ? -inv_count * a * ratio(i) : 0.0;
            if (dlogp != 0.0) {
              const VecX z =
                  ((actions.col(i) - fwd.mean.col(i)).array() / sigma.array())
                      .matrix();
              grad.dmean.col(i) = (dlogp * z.array() / sigma.array()).matrix();
              grad.dlogstd += (dlogp * (z.array().square() - 1.0)).matrix();
            }

            const double verr = fwd.value(i) - c_ret(i);
            out.value_loss += 0.5 * verr * verr;
            grad.dvalue(i) = config.value_coef * inv_count * verr;
          }
          out.grads = policy_backward(params, cache, grad);
          out.ok = true;
        } catch (const NumericError&) {
          out.ok = false;
        }
      });

      double surrogate = 0.0;
      double value_loss = 0.0;
      double kl = 0.0;
      int clipped = 0;
      GradMap grads;
      zero_like(params, &grads);
      for (const ChunkResult& r : results) {
        if (!r.ok) {
          finite = false;
          break;
        }
        surrogate += r.surrogate;
        value_loss += r.value_loss;
        kl += r.kl;
        clipped += r.clipped;
        for (auto& [name, g] : grads) g += r.grads.at(name);
      }
      if (!finite) break;
      grads.at("log_std").col(0).array() -= config.entropy_coef;

      surrogate *= inv_count;
      value_loss *= inv_count;
      kl *= inv_count;
      const double loss = -surrogate + config.value_coef * value_loss -
                          config.entropy_coef * entropy;
      const double norm = global_grad_norm(grads);
      if (!std::isfinite(loss) || !std::isfinite(norm)) {
        finite = false;
        break;
      }
      if (norm > config.grad_clip) {
        const double scale = config.grad_clip / norm;
        for (auto& [name, g] : grads) g *= scale;
      }
      adam_step(&params, grads, &adam, lr_now);

      metrics.surrogate += surrogate;
      metrics.value_loss += value_loss;
      metrics.entropy += entropy;
      metrics.approx_kl += kl;
      metrics.clip_fraction +=
          static_cast<double>(clipped) / static_cast<double>(count);
      metrics.grad_norm = norm;
      ++passes;
    }
  }

  if (!finite) {
    params = params_snapshot;
    adam = adam_snapshot;
    metrics = UpdateMetrics{};
    metrics.lr = lr_now;
    metrics.aborted = true;
    return metrics;
  }

  if (passes > 0) {
    const double inv = 1.0 / static_cast<double>(passes);
    metrics.surrogate *= inv;
    metrics.value_loss *= inv;
    metrics.entropy *= inv;
    metrics.approx_kl *= inv;
    metrics.clip_fraction *= inv;
  }
  return metrics;
}

namespace {

struct BatchForward {
  MatX mean;
  VecX logstd;
  VecX value;
};

BatchForward chunked_forward(const PolicyParams& params,
                             const std::vector<Observation>& obs, int jobs) {
  const int n = static_cast<int>(obs.size());
  BatchForward out;
  out.mean = MatX(params.config.dof, n);
  out.value = VecX(n);
  out.logstd = params.at("log_std").col(0);

  std::exception_ptr error;
  std::mutex error_mutex;
  parallel_chunks(n, kForwardChunk, jobs, [&](int, int lo, int hi) {
    try {
      const std::vector<Observation> sub(obs.begin() + lo, obs.begin() + hi);
      const ForwardResult f = policy_forward(params, sub);
      out.mean.middleCols(lo, hi - lo) = f.mean;
      out.value.segment(lo, hi - lo) = f.value;
    } catch (...) {
      const std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  });
  if (error) std::rethrow_exception(error);
  return out;
}

struct EnvSlot {
  EnvState state;
  int episode = 0;
  int steps_done = 0;
  bool reached = false;
  double episode_return = 0.0;
};

void reset_slot(const Env& env, const PpoConfig& config, uint64_t seed, int e,
                EnvSlot* slot) {
  const Scene& scene = env.scene();
  const Vec3 keypoint = sample_training_keypoint(
      scene.initial_guess, config.keypoint_halfwidth,
      derive_seed({seed, kKeypointTag, static_cast<uint64_t>(e),
                   static_cast<uint64_t>(slot->episode)}));
  slot->state = env.reset(
      keypoint, derive_seed({seed, kEnvResetTag, static_cast<uint64_t>(e),
                             static_cast<uint64_t>(slot->episode)}));
  slot->steps_done = 0;
  slot->episode_return = 0.0;
  const Pose ee = forward_kinematics_scaled(scene.chain, slot->state.joints,
                                            slot->state.link_scale);
  slot->reached = (ee.position - slot->state.keypoint).norm() <= scene.grasp_radius;
}

struct RolloutStats {
  double return_sum = 0.0;
  int episodes = 0;
  double reward_sum = 0.0;
};

RolloutBuffer collect_rollout(const Env& env, const PolicyParams& params,
                              const PpoConfig& config,
                              const ObservationSpec& spec,
                              const RewardWeights& weights, int update,
                              uint64_t seed, std::vector<EnvSlot>* slots,
                              RolloutStats* stats) {
  const Scene& scene = env.scene();
  const int dof = params.config.dof;
  // Rewards are stored pre-scaled by (1 - gamma) so value targets stay O(1)
  // regardless of the discount horizon. Advantages are z-normalized before
  // the surrogate, so the actor update is invariant to this scaling; only
  // the critic's fitting problem gets better conditioned. Logged returns
  // stay in raw reward units.
  const double reward_scale = config.gamma < 1.0 ? 1.0 - config.gamma : 1.0;

  RolloutBuffer buffer;
  buffer.num_envs = config.num_envs;
  buffer.steps = config.rollout_steps;
  buffer.observations.resize(static_cast<size_t>(buffer.size()));
  buffer.actions = MatX::Zero(dof, buffer.size());
  buffer.log_probs = VecX::Zero(buffer.size());
  buffer.rewards = VecX::Zero(buffer.size());
  buffer.values = VecX::Zero(buffer.size());
  buffer.done.assign(static_cast<size_t>(buffer.size()), 0);
  buffer.bootstrap_values = VecX::Zero(config.num_envs);

  std::vector<Observation> obs(static_cast<size_t>(config.num_envs));
  for (int t = 0; t < config.rollout_steps; ++t) {
    const auto global_step =
        static_cast<uint64_t>(update) * static_cast<uint64_t>(config.rollout_steps) +
        static_cast<uint64_t>(t);
    for (int e = 0; e < config.num_envs; ++e) {
      obs[static_cast<size_t>(e)] = env.observe(
          (*slots)[static_cast<size_t>(e)].state, spec,
          derive_seed({seed, kObsTag, global_step, static_cast<uint64_t>(e)}));
    }
    const BatchForward fwd = chunked_forward(params, obs, config.jobs);

    for (int e = 0; e < config.num_envs; ++e) {
      EnvSlot& slot = (*slots)[static_cast<size_t>(e)];
      const int idx = e * config.rollout_steps + t;

      const SampledAction sampled = sample_action(
          fwd.mean.col(e), fwd.logstd, params.config.action_bound,
          derive_seed({seed, kActTag, global_step, static_cast<uint64_t>(e)}));

      Action action;
      action.delta = sampled.action;
      action.gripper = gripper_controller(scene.task, slot.reached);

      const VecX prev = slot.state.prev_action();
      auto [next, info] = env.step(slot.state, action);
      slot.reached = slot.reached || info.distance <= scene.grasp_radius;

      const double reward = step_reward(info, next.prev_action(), prev, weights);
      slot.state = std::move(next);
      slot.steps_done += 1;
      slot.episode_return += reward;

      buffer.observations[static_cast<size_t>(idx)] = obs[static_cast<size_t>(e)];
      buffer.actions.col(idx) = sampled.raw;
      buffer.log_probs(idx) = sampled.logp;
      buffer.rewards(idx) = reward * reward_scale;
      buffer.values(idx) = fwd.value(e);
      stats->reward_sum += reward;

      if (slot.steps_done >= scene.horizon) {
        buffer.done[static_cast<size_t>(idx)] = 1;
        stats->return_sum += slot.episode_return;
        stats->episodes += 1;
        slot.episode += 1;
        reset_slot(env, config, seed, e, &slot);
      }
    }
  }

  for (int e = 0; e < config.num_envs; ++e) {
    obs[static_cast<size_t>(e)] = env.observe(
        (*slots)[static_cast<size_t>(e)].state, spec,
        derive_seed({seed, kObsTag,
                     static_cast<uint64_t>(update + 1) *
                         static_cast<uint64_t>(config.rollout_steps),
                     static_cast<uint64_t>(e)}));
  }
  const BatchForward fwd = chunked_forward(params, obs, config.jobs);
  buffer.bootstrap_values = fwd.value;
  return buffer;
}

}  // namespace

TrainResult train(const Scene& scene, const DomainRandomizationConfig& dr,
                  const CurriculumSchedule& curriculum,
                  const PolicyConfig& policy_config, const PpoConfig& config,
                  uint64_t seed,
                  const std::function<void(const TrainLogEntry&)>& on_update) {
  config.validate();
  dr.validate();
  curriculum.validate();

  PolicyConfig pcfg = policy_config;
  pcfg.dof = scene.chain.dof();
  pcfg.action_bound = scene.chain.step_bound();
  pcfg.validate();

  const Env env(scene, dr, PerturbationConfig{});
  ObservationSpec spec;
  spec.encoding = pcfg.encoding;
  spec.history = pcfg.history;
  spec.validate();

  TrainResult result{init_policy(pcfg, derive_seed({seed, kInitTag})), {}};
  if (config.total_updates == 0) return result;

  AdamState adam;
  std::vector<EnvSlot> slots(static_cast<size_t>(config.num_envs));
  for (int e = 0; e < config.num_envs; ++e)
    reset_slot(env, config, seed, e, &slots[static_cast<size_t>(e)]);

  DomainRandomizationConfig nominal = dr;
  nominal.enabled = false;
  const Env eval_env(scene, nominal, PerturbationConfig{});

  result.log.reserve(static_cast<size_t>(config.total_updates));
  for (int update = 0; update < config.total_updates; ++update) {
    const double progress = static_cast<double>(update) /
                            static_cast<double>(config.total_updates);
    const RewardWeights weights = curriculum_weights(curriculum, progress);

    RolloutStats stats;
    const RolloutBuffer buffer = collect_rollout(env, result.params, config,
                                                 spec, weights, update, seed,
                                                 &slots, &stats);

    const double lr_now =
        config.learning_rate * (config.lr_linear_decay ? 1.0 - progress : 1.0);
    const UpdateMetrics metrics =
        ppo_update(result.params, buffer, config, lr_now, adam,
                   derive_seed({seed, kUpdateTag, static_cast<uint64_t>(update)}));

    TrainLogEntry entry;
    entry.update = update;
    entry.curriculum_progress = progress;
    entry.episodes_finished = stats.episodes;
    entry.mean_episode_return =
        stats.episodes > 0 ? stats.return_sum / stats.episodes : 0.0;
    entry.mean_step_reward = stats.reward_sum / buffer.size();
    entry.metrics = metrics;

    const bool last = update + 1 == config.total_updates;
    if (config.eval_every > 0 &&
        ((update + 1) % config.eval_every == 0 || last)) {
      EpisodeConfig ep;
      ep.obs_spec = spec;
      int successes = 0;
      double distance_sum = 0.0;
      for (int i = 0; i < config.eval_episodes; ++i) {
        const Vec3 keypoint = sample_training_keypoint(
            scene.initial_guess, config.keypoint_halfwidth,
            derive_seed({seed, kEvalTag, static_cast<uint64_t>(update),
                         static_cast<uint64_t>(i), 0}));
        const EpisodeResult res = run_episode(
            eval_env, result.params, ep, keypoint,
            derive_seed({seed, kEvalTag, static_cast<uint64_t>(update),
                         static_cast<uint64_t>(i), 1}));
        distance_sum += res.final_distance;
        if (res.final_distance < kReachDistanceThreshold &&
            res.final_angle < kReachAngleThreshold) {
          ++successes;
        }
      }
      entry.has_eval = true;
      entry.eval_success_rate =
          static_cast<double>(successes) / config.eval_episodes;
      entry.eval_mean_distance = distance_sum / config.eval_episodes;
    }
    result.log.push_back(entry);
    if (on_update) on_update(entry);
  }
  return result;
}

}  // namespace affkit
