#include "affkit/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>
#include <utility>

#include "affkit/hash.hpp"
#include "json.hpp"

namespace affkit {
namespace {

using nlohmann::json;

Quat rotvec_quat(const Vec3& v) {
  const double angle = v.norm();
  if (angle == 0.0) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, v / angle));
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (std::string_view k : allowed) known = known || item.key() == k;
    if (!known) throw ConfigError(path + "." + item.key(), "unknown key");
  }
}

double read_double(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

int read_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<int>();
}

bool read_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "expected a boolean");
  return j.get<bool>();
}

std::string read_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

Vec3 read_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(path, "expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) v(i) = read_double(j[static_cast<size_t>(i)], path);
  return v;
}

VecX read_vecx(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = read_double(j[i], path);
  return v;
}

json write_vec(const VecX& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

TaskKind parse_task(const std::string& s, const std::string& path) {
  if (s == "grasping") return TaskKind::grasping;
  if (s == "non_grasping") return TaskKind::non_grasping;
  throw ConfigError(path, "expected \"grasping\" or \"non_grasping\"");
}

std::string task_name(TaskKind k) {
  return k == TaskKind::grasping ? "grasping" : "non_grasping";
}

ArticulationType parse_articulation(const std::string& s, const std::string& path) {
  if (s == "none") return ArticulationType::none;
  if (s == "prismatic") return ArticulationType::prismatic;
  if (s == "revolute") return ArticulationType::revolute;
  throw ConfigError(path, "expected \"none\", \"prismatic\" or \"revolute\"");
}

std::string articulation_name(ArticulationType t) {
  switch (t) {
    case ArticulationType::none: return "none";
    case ArticulationType::prismatic: return "prismatic";
    case ArticulationType::revolute: return "revolute";
  }
  return "none";
}

EncodingMode parse_encoding(const std::string& s, const std::string& path) {
  if (s == "trig") return EncodingMode::trig;
  if (s == "raw") return EncodingMode::raw;
  throw ConfigError(path, "expected \"trig\" or \"raw\"");
}

CemLandscape parse_landscape(const std::string& s, const std::string& path) {
  if (s == "rollout") return CemLandscape::rollout;
  if (s == "synthetic") return CemLandscape::synthetic;
  throw ConfigError(path, "expected \"rollout\" or \"synthetic\"");
}

std::string landscape_name(CemLandscape l) {
  return l == CemLandscape::rollout ? "rollout" : "synthetic";
}

std::string encoding_name(EncodingMode m) {
  return m == EncodingMode::trig ? "trig" : "raw";
}

AblationCell parse_cell(const std::string& s, const std::string& path) {
  if (s == "full") return AblationCell::full;
  if (s == "no-DR") return AblationCell::no_dr;
  if (s == "no-TE") return AblationCell::no_te;
  throw ConfigError(path, "expected \"full\", \"no-DR\" or \"no-TE\"");
}

LinkConfig parse_link(const json& j, const std::string& path) {
  check_keys(j, path, {"length", "axis", "limit_lo", "limit_hi", "max_speed"});
  LinkConfig link;
  if (j.contains("length")) link.length = read_double(j["length"], path + ".length");
  if (j.contains("axis")) link.axis = read_vec3(j["axis"], path + ".axis");
  if (j.contains("limit_lo")) link.limit_lo = read_double(j["limit_lo"], path + ".limit_lo");
  if (j.contains("limit_hi")) link.limit_hi = read_double(j["limit_hi"], path + ".limit_hi");
  if (j.contains("max_speed")) link.max_speed = read_double(j["max_speed"], path + ".max_speed");
  return link;
}

json write_link(const LinkConfig& link) {
  json j;
  j["length"] = link.length;
  j["axis"] = write_vec(link.axis);
  j["limit_lo"] = link.limit_lo;
  j["limit_hi"] = link.limit_hi;
  j["max_speed"] = link.max_speed;
  return j;
}

ObjectConfig parse_object(const json& j, const std::string& path) {
  check_keys(j, path, {"type", "axis", "origin", "travel", "handle_position",
                       "handle_rotation"});
  ObjectConfig object;
  if (j.contains("type"))
    object.type = parse_articulation(read_string(j["type"], path + ".type"), path + ".type");
  if (j.contains("axis")) object.axis = read_vec3(j["axis"], path + ".axis");
  if (j.contains("origin")) object.origin = read_vec3(j["origin"], path + ".origin");
  if (j.contains("travel")) object.travel = read_double(j["travel"], path + ".travel");
  if (j.contains("handle_position"))
    object.handle_position = read_vec3(j["handle_position"], path + ".handle_position");
  if (j.contains("handle_rotation"))
    object.handle_rotation = read_vec3(j["handle_rotation"], path + ".handle_rotation");
  return object;
}

json write_object(const ObjectConfig& object) {
  json j;
  j["type"] = articulation_name(object.type);
  j["axis"] = write_vec(object.axis);
  j["origin"] = write_vec(object.origin);
  j["travel"] = object.travel;
  j["handle_position"] = write_vec(object.handle_position);
  j["handle_rotation"] = write_vec(object.handle_rotation);
  return j;
}

SceneConfig parse_scene(const json& j) {
  const std::string path = "scene";
  check_keys(j, path,
             {"links", "base_position", "base_rotation", "task", "object",
              "true_affordance", "initial_guess", "target_rotation",
              "grasp_radius", "home", "horizon"});
  SceneConfig scene;
  if (j.contains("links")) {
    if (!j["links"].is_array()) throw ConfigError("scene.links", "expected an array");
    scene.links.clear();
    for (size_t i = 0; i < j["links"].size(); ++i)
      scene.links.push_back(
          parse_link(j["links"][i], "scene.links[" + std::to_string(i) + "]"));
  }
  if (j.contains("base_position"))
    scene.base_position = read_vec3(j["base_position"], path + ".base_position");
  if (j.contains("base_rotation"))
    scene.base_rotation = read_vec3(j["base_rotation"], path + ".base_rotation");
  if (j.contains("task"))
    scene.task = parse_task(read_string(j["task"], path + ".task"), path + ".task");
  if (j.contains("object")) scene.object = parse_object(j["object"], path + ".object");
  if (j.contains("true_affordance"))
    scene.true_affordance = read_vec3(j["true_affordance"], path + ".true_affordance");
  if (j.contains("initial_guess"))
    scene.initial_guess = read_vec3(j["initial_guess"], path + ".initial_guess");
  if (j.contains("target_rotation"))
    scene.target_rotation = read_vec3(j["target_rotation"], path + ".target_rotation");
  if (j.contains("grasp_radius"))
    scene.grasp_radius = read_double(j["grasp_radius"], path + ".grasp_radius");
  if (j.contains("home")) scene.home = read_vecx(j["home"], path + ".home");
  if (j.contains("horizon")) scene.horizon = read_int(j["horizon"], path + ".horizon");
  return scene;
}

json write_scene(const SceneConfig& scene) {
  json j;
  j["links"] = json::array();
  for (const LinkConfig& link : scene.links) j["links"].push_back(write_link(link));
  j["base_position"] = write_vec(scene.base_position);
  j["base_rotation"] = write_vec(scene.base_rotation);
  j["task"] = task_name(scene.task);
  j["object"] = write_object(scene.object);
  j["true_affordance"] = write_vec(scene.true_affordance);
  j["initial_guess"] = write_vec(scene.initial_guess);
  j["target_rotation"] = write_vec(scene.target_rotation);
  j["grasp_radius"] = scene.grasp_radius;
  j["home"] = write_vec(scene.home);
  j["horizon"] = scene.horizon;
  return j;
}

RewardWeights parse_weights(const json& j, const std::string& path,
                            const RewardWeights& base) {
  check_keys(j, path, {"w_d1", "w_d2", "w_d3", "sigma1", "sigma2", "w_ori",
                       "w_l2", "w_rate", "w_vel"});
  RewardWeights w = base;
  if (j.contains("w_d1")) w.w_d1 = read_double(j["w_d1"], path + ".w_d1");
  if (j.contains("w_d2")) w.w_d2 = read_double(j["w_d2"], path + ".w_d2");
  if (j.contains("w_d3")) w.w_d3 = read_double(j["w_d3"], path + ".w_d3");
  if (j.contains("sigma1")) w.sigma1 = read_double(j["sigma1"], path + ".sigma1");
  if (j.contains("sigma2")) w.sigma2 = read_double(j["sigma2"], path + ".sigma2");
  if (j.contains("w_ori")) w.w_ori = read_double(j["w_ori"], path + ".w_ori");
  if (j.contains("w_l2")) w.w_l2 = read_double(j["w_l2"], path + ".w_l2");
  if (j.contains("w_rate")) w.w_rate = read_double(j["w_rate"], path + ".w_rate");
  if (j.contains("w_vel")) w.w_vel = read_double(j["w_vel"], path + ".w_vel");
  return w;
}

json write_weights(const RewardWeights& w) {
  json j;
  j["w_d1"] = w.w_d1;
  j["w_d2"] = w.w_d2;
  j["w_d3"] = w.w_d3;
  j["sigma1"] = w.sigma1;
  j["sigma2"] = w.sigma2;
  j["w_ori"] = w.w_ori;
  j["w_l2"] = w.w_l2;
  j["w_rate"] = w.w_rate;
  j["w_vel"] = w.w_vel;
  return j;
}

RewardConfig parse_reward(const json& j) {
  check_keys(j, "reward", {"weights", "curriculum"});
  RewardConfig reward;
  if (j.contains("weights"))
    reward.weights = parse_weights(j["weights"], "reward.weights", RewardWeights{});
  if (j.contains("curriculum")) {
    if (!j["curriculum"].is_array())
      throw ConfigError("reward.curriculum", "expected an array");
    reward.curriculum.phases.clear();
    for (size_t i = 0; i < j["curriculum"].size(); ++i) {
      const std::string path = "reward.curriculum[" + std::to_string(i) + "]";
      const json& phase = j["curriculum"][i];
      check_keys(phase, path, {"progress", "weights"});
      if (!phase.contains("progress"))
        throw ConfigError(path + ".progress", "required in curriculum phases");
      const double progress = read_double(phase["progress"], path + ".progress");
      RewardWeights w = reward.weights;
      if (phase.contains("weights"))
        w = parse_weights(phase["weights"], path + ".weights", reward.weights);
      reward.curriculum.phases.emplace_back(progress, w);
    }
  } else {
    reward.curriculum = CurriculumSchedule::default_schedule(reward.weights);
  }
  return reward;
}

json write_reward(const RewardConfig& reward) {
  json j;
  j["weights"] = write_weights(reward.weights);
  j["curriculum"] = json::array();
  for (const auto& [progress, w] : reward.curriculum.phases) {
    json phase;
    phase["progress"] = progress;
    phase["weights"] = write_weights(w);
    j["curriculum"].push_back(phase);
  }
  return j;
}

PolicyConfig parse_policy(const json& j) {
  const std::string path = "policy";
  check_keys(j, path, {"layers", "heads", "embed", "ff", "actor_hidden",
                       "critic_hidden", "encoding", "history", "logstd_init"});
  PolicyConfig policy;
  if (j.contains("layers")) policy.layers = read_int(j["layers"], path + ".layers");
  if (j.contains("heads")) policy.heads = read_int(j["heads"], path + ".heads");
  if (j.contains("embed")) policy.embed = read_int(j["embed"], path + ".embed");
  if (j.contains("ff")) policy.ff = read_int(j["ff"], path + ".ff");
  if (j.contains("actor_hidden"))
    policy.actor_hidden = read_int(j["actor_hidden"], path + ".actor_hidden");
  if (j.contains("critic_hidden"))
    policy.critic_hidden = read_int(j["critic_hidden"], path + ".critic_hidden");
  if (j.contains("encoding"))
    policy.encoding =
        parse_encoding(read_string(j["encoding"], path + ".encoding"), path + ".encoding");
  if (j.contains("history")) policy.history = read_int(j["history"], path + ".history");
  if (j.contains("logstd_init"))
    policy.logstd_init = read_double(j["logstd_init"], path + ".logstd_init");
  return policy;
}

json write_policy(const PolicyConfig& policy) {
  json j;
  j["layers"] = policy.layers;
  j["heads"] = policy.heads;
  j["embed"] = policy.embed;
  j["ff"] = policy.ff;
  j["actor_hidden"] = policy.actor_hidden;
  j["critic_hidden"] = policy.critic_hidden;
  j["encoding"] = encoding_name(policy.encoding);
  j["history"] = policy.history;
  j["logstd_init"] = policy.logstd_init;
  return j;
}

PpoConfig parse_ppo(const json& j) {
  const std::string path = "ppo";
  check_keys(j, path,
             {"gamma", "lambda", "clip_ratio", "epochs", "minibatch_size",
              "learning_rate", "lr_linear_decay", "entropy_coef", "value_coef",
              "grad_clip", "rollout_steps", "num_envs", "total_updates",
              "keypoint_halfwidth", "eval_every", "eval_episodes"});
  PpoConfig ppo = ExperimentConfig::default_ppo();
  if (j.contains("gamma")) ppo.gamma = read_double(j["gamma"], path + ".gamma");
  if (j.contains("lambda")) ppo.lambda = read_double(j["lambda"], path + ".lambda");
  if (j.contains("clip_ratio"))
    ppo.clip_ratio = read_double(j["clip_ratio"], path + ".clip_ratio");
  if (j.contains("epochs")) ppo.epochs = read_int(j["epochs"], path + ".epochs");
  if (j.contains("minibatch_size"))
    ppo.minibatch_size = read_int(j["minibatch_size"], path + ".minibatch_size");
  if (j.contains("learning_rate"))
    ppo.learning_rate = read_double(j["learning_rate"], path + ".learning_rate");
  if (j.contains("lr_linear_decay"))
    ppo.lr_linear_decay = read_bool(j["lr_linear_decay"], path + ".lr_linear_decay");
  if (j.contains("entropy_coef"))
    ppo.entropy_coef = read_double(j["entropy_coef"], path + ".entropy_coef");
  if (j.contains("value_coef"))
    ppo.value_coef = read_double(j["value_coef"], path + ".value_coef");
  if (j.contains("grad_clip"))
    ppo.grad_clip = read_double(j["grad_clip"], path + ".grad_clip");
  if (j.contains("rollout_steps"))
    ppo.rollout_steps = read_int(j["rollout_steps"], path + ".rollout_steps");
  if (j.contains("num_envs")) ppo.num_envs = read_int(j["num_envs"], path + ".num_envs");
  if (j.contains("total_updates"))
    ppo.total_updates = read_int(j["total_updates"], path + ".total_updates");
  if (j.contains("keypoint_halfwidth"))
    ppo.keypoint_halfwidth =
        read_vec3(j["keypoint_halfwidth"], path + ".keypoint_halfwidth");
  if (j.contains("eval_every"))
    ppo.eval_every = read_int(j["eval_every"], path + ".eval_every");
  if (j.contains("eval_episodes"))
    ppo.eval_episodes = read_int(j["eval_episodes"], path + ".eval_episodes");
  return ppo;
}

json write_ppo(const PpoConfig& ppo) {
  json j;
  j["gamma"] = ppo.gamma;
  j["lambda"] = ppo.lambda;
  j["clip_ratio"] = ppo.clip_ratio;
  j["epochs"] = ppo.epochs;
  j["minibatch_size"] = ppo.minibatch_size;
  j["learning_rate"] = ppo.learning_rate;
  j["lr_linear_decay"] = ppo.lr_linear_decay;
  j["entropy_coef"] = ppo.entropy_coef;
  j["value_coef"] = ppo.value_coef;
  j["grad_clip"] = ppo.grad_clip;
  j["rollout_steps"] = ppo.rollout_steps;
  j["num_envs"] = ppo.num_envs;
  j["total_updates"] = ppo.total_updates;
  j["keypoint_halfwidth"] = write_vec(ppo.keypoint_halfwidth);
  j["eval_every"] = ppo.eval_every;
  j["eval_episodes"] = ppo.eval_episodes;
  return j;
}

CemSection parse_cem(const json& j) {
  const std::string path = "cem";
  check_keys(j, path,
             {"sample_size", "elite_size", "rollouts", "max_iterations",
              "sigma_threshold", "jitter", "optimize_orientation", "initial_std",
              "landscape"});
  CemSection cem;
  if (j.contains("sample_size"))
    cem.config.sample_size = read_int(j["sample_size"], path + ".sample_size");
  if (j.contains("elite_size"))
    cem.config.elite_size = read_int(j["elite_size"], path + ".elite_size");
  if (j.contains("rollouts"))
    cem.config.rollouts = read_int(j["rollouts"], path + ".rollouts");
  if (j.contains("max_iterations"))
    cem.config.max_iterations = read_int(j["max_iterations"], path + ".max_iterations");
  if (j.contains("sigma_threshold"))
    cem.config.sigma_threshold =
        read_double(j["sigma_threshold"], path + ".sigma_threshold");
  if (j.contains("jitter")) cem.config.jitter = read_double(j["jitter"], path + ".jitter");
  if (j.contains("optimize_orientation"))
    cem.config.optimize_orientation =
        read_bool(j["optimize_orientation"], path + ".optimize_orientation");
  if (j.contains("initial_std"))
    cem.initial_std = read_vecx(j["initial_std"], path + ".initial_std");
  if (j.contains("landscape"))
    cem.landscape = parse_landscape(read_string(j["landscape"], path + ".landscape"),
                                    path + ".landscape");
  return cem;
}

json write_cem(const CemSection& cem) {
  json j;
  j["sample_size"] = cem.config.sample_size;
  j["elite_size"] = cem.config.elite_size;
  j["rollouts"] = cem.config.rollouts;
  j["max_iterations"] = cem.config.max_iterations;
  j["sigma_threshold"] = cem.config.sigma_threshold;
  j["jitter"] = cem.config.jitter;
  j["optimize_orientation"] = cem.config.optimize_orientation;
  j["initial_std"] = write_vec(cem.initial_std);
  j["landscape"] = landscape_name(cem.landscape);
  return j;
}

DomainRandomizationConfig parse_dr(const json& j, const std::string& path) {
  check_keys(j, path, {"enabled", "joint_jitter", "velocity_jitter",
                       "link_scale_jitter", "obs_noise", "keypoint_jitter"});
  DomainRandomizationConfig dr;
  if (j.contains("enabled")) dr.enabled = read_bool(j["enabled"], path + ".enabled");
  if (j.contains("joint_jitter"))
    dr.joint_jitter = read_double(j["joint_jitter"], path + ".joint_jitter");
  if (j.contains("velocity_jitter"))
    dr.velocity_jitter = read_double(j["velocity_jitter"], path + ".velocity_jitter");
  if (j.contains("link_scale_jitter"))
    dr.link_scale_jitter =
        read_double(j["link_scale_jitter"], path + ".link_scale_jitter");
  if (j.contains("obs_noise"))
    dr.obs_noise = read_double(j["obs_noise"], path + ".obs_noise");
  if (j.contains("keypoint_jitter"))
    dr.keypoint_jitter = read_double(j["keypoint_jitter"], path + ".keypoint_jitter");
  return dr;
}

json write_dr(const DomainRandomizationConfig& dr) {
  json j;
  j["enabled"] = dr.enabled;
  j["joint_jitter"] = dr.joint_jitter;
  j["velocity_jitter"] = dr.velocity_jitter;
  j["link_scale_jitter"] = dr.link_scale_jitter;
  j["obs_noise"] = dr.obs_noise;
  j["keypoint_jitter"] = dr.keypoint_jitter;
  return j;
}

PerturbationConfig parse_perturbation(const json& j, const std::string& path) {
  check_keys(j, path,
             {"enabled", "link_offset_scale", "action_noise", "keypoint_error"});
  PerturbationConfig p;
  p.enabled = true;  // harness default: the held-out world perturbs
  if (j.contains("enabled")) p.enabled = read_bool(j["enabled"], path + ".enabled");
  if (j.contains("link_offset_scale"))
    p.link_offset_scale = read_double(j["link_offset_scale"], path + ".link_offset_scale");
  if (j.contains("action_noise"))
    p.action_noise = read_double(j["action_noise"], path + ".action_noise");
  if (j.contains("keypoint_error"))
    p.keypoint_error = read_double(j["keypoint_error"], path + ".keypoint_error");
  return p;
}

json write_perturbation(const PerturbationConfig& p) {
  json j;
  j["enabled"] = p.enabled;
  j["link_offset_scale"] = p.link_offset_scale;
  j["action_noise"] = p.action_noise;
  j["keypoint_error"] = p.keypoint_error;
  return j;
}

HarnessConfig parse_harness(const json& j) {
  const std::string path = "harness";
  check_keys(j, path, {"dr", "perturbation", "cells", "seeds", "trials"});
  HarnessConfig harness;
  if (j.contains("dr")) harness.dr = parse_dr(j["dr"], path + ".dr");
  if (j.contains("perturbation"))
    harness.perturbation = parse_perturbation(j["perturbation"], path + ".perturbation");
  if (j.contains("cells")) {
    if (!j["cells"].is_array()) throw ConfigError("harness.cells", "expected an array");
    harness.cells.clear();
    for (size_t i = 0; i < j["cells"].size(); ++i) {
      const std::string p = "harness.cells[" + std::to_string(i) + "]";
      harness.cells.push_back(parse_cell(read_string(j["cells"][i], p), p));
    }
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) throw ConfigError("harness.seeds", "expected an array");
    harness.seeds.clear();
    for (size_t i = 0; i < j["seeds"].size(); ++i) {
      const std::string p = "harness.seeds[" + std::to_string(i) + "]";
      const json& s = j["seeds"][i];
      if (!s.is_number_integer() ||
          (!s.is_number_unsigned() && s.get<int64_t>() < 0))
        throw ConfigError(p, "expected a non-negative integer");
      harness.seeds.push_back(s.get<uint64_t>());
    }
  }
  if (j.contains("trials")) harness.trials = read_int(j["trials"], path + ".trials");
  return harness;
}

json write_harness(const HarnessConfig& harness) {
  json j;
  j["dr"] = write_dr(harness.dr);
  j["perturbation"] = write_perturbation(harness.perturbation);
  j["cells"] = json::array();
  for (AblationCell cell : harness.cells) j["cells"].push_back(to_string(cell));
  j["seeds"] = json::array();
  for (uint64_t seed : harness.seeds) j["seeds"].push_back(seed);
  j["trials"] = harness.trials;
  return j;
}

}  // namespace

std::string to_string(AblationCell cell) {
  switch (cell) {
    case AblationCell::full: return "full";
    case AblationCell::no_dr: return "no-DR";
    case AblationCell::no_te: return "no-TE";
  }
  return "full";
}

Scene SceneConfig::to_scene() const {
  std::vector<LinkSpec> links_spec;
  for (const LinkConfig& link : links)
    links_spec.push_back(
        {link.length, link.axis, link.limit_lo, link.limit_hi, link.max_speed});
  Pose base;
  base.position = base_position;
  base.orientation = rotvec_quat(base_rotation);

  ArticulatedObject obj;
  obj.type = object.type;
  obj.axis = object.axis;
  obj.origin = object.origin;
  obj.travel = object.travel;
  obj.handle.position = object.handle_position;
  obj.handle.orientation = rotvec_quat(object.handle_rotation);

  return Scene(KinematicChain(links_spec, base), obj, task, true_affordance,
               initial_guess, rotvec_quat(target_rotation), grasp_radius, home,
               horizon);
}

void HarnessConfig::validate() const {
  dr.validate();
  perturbation.validate();
  if (cells.empty()) throw ConfigError("harness.cells", "must not be empty");
  for (size_t i = 0; i < cells.size(); ++i)
    for (size_t k = i + 1; k < cells.size(); ++k)
      if (cells[i] == cells[k])
        throw ConfigError("harness.cells", "duplicate cell " + to_string(cells[i]));
  if (seeds.empty()) throw ConfigError("harness.seeds", "must not be empty");
  if (trials < 0) throw ConfigError("harness.trials", "must be >= 0");
}

KeypointDistribution CemSection::initial_space(const Vec3& guess) const {
  KeypointDistribution space;
  space.mean = VecX::Zero(initial_std.size());
  space.mean.head(3) = guess;
  space.covariance = initial_std.cwiseProduct(initial_std).asDiagonal();
  return space;
}

PpoConfig ExperimentConfig::default_ppo() {
  PpoConfig ppo;
  ppo.keypoint_halfwidth = Vec3(0.10, 0.10, 0.0);
  return ppo;
}

PolicyConfig composed_policy(const ExperimentConfig& config) {
  const Scene built = config.scene.to_scene();
  PolicyConfig composed = config.policy;
  composed.dof = built.chain.dof();
  composed.action_bound = built.chain.step_bound();
  return composed;
}

void ExperimentConfig::validate() const {
  scene.to_scene();  // validates geometry and home

  reward.weights.validate();
  reward.curriculum.validate();

  composed_policy(*this).validate();

  ppo.validate();

  cem.config.validate();
  const auto d = cem.initial_std.size();
  if (d != (cem.config.optimize_orientation ? 6 : 3)) {
    throw ConfigError("cem.initial_std",
                      "needs 3 entries (6 with optimize_orientation)");
  }
  if (!cem.initial_std.allFinite() || (cem.initial_std.array() < 0.0).any())
    throw ConfigError("cem.initial_std", "entries must be finite and >= 0");
  for (int a = 0; a < 3; ++a) {
    if (ppo.keypoint_halfwidth(a) + 1e-12 < 3.0 * cem.initial_std(a)) {
      throw ConfigError("cem.initial_std",
                        "training half-width must be >= 3x the initial std "
                        "so refinement stays in-distribution");
    }
  }

  harness.validate();
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"scene", "reward", "policy", "ppo", "cem", "harness"});

  ExperimentConfig config;
  if (j.contains("scene")) config.scene = parse_scene(j["scene"]);
  if (j.contains("reward")) config.reward = parse_reward(j["reward"]);
  if (j.contains("policy")) config.policy = parse_policy(j["policy"]);
  if (j.contains("ppo")) config.ppo = parse_ppo(j["ppo"]);
  if (j.contains("cem")) config.cem = parse_cem(j["cem"]);
  if (j.contains("harness")) config.harness = parse_harness(j["harness"]);
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot read config file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  json j;
  j["scene"] = write_scene(config.scene);
  j["reward"] = write_reward(config.reward);
  j["policy"] = write_policy(config.policy);
  j["ppo"] = write_ppo(config.ppo);
  j["cem"] = write_cem(config.cem);
  j["harness"] = write_harness(config.harness);
  return j.dump(2) + "\n";
}

uint64_t config_fingerprint(const ExperimentConfig& config) {
  return fnv1a64(serialize_config(config));
}

}  // namespace affkit
