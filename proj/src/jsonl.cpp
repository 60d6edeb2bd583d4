#include "affkit/jsonl.hpp"

#include <cstdio>

#include "affkit/version.hpp"
#include "json.hpp"

namespace affkit {
namespace {

using nlohmann::json;

json vec_json(const VecX& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json matrix_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string hex_fingerprint(uint64_t fingerprint) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fingerprint));
  return buf;
}

void emit(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

}  // namespace

void write_artifact_header(std::ostream& out, std::string_view kind,
                           uint64_t fingerprint) {
  json j;
  j["artifact"] = std::string(kind);
  j["fingerprint"] = hex_fingerprint(fingerprint);
  j["format"] = 1;
  j["version"] = kVersion;
  emit(out, j);
}

void write_training_log(std::ostream& out, const std::vector<TrainLogEntry>& log) {
  for (const TrainLogEntry& entry : log) {
    json j;
    j["update"] = entry.update;
    j["mean_step_reward"] = entry.mean_step_reward;
    j["mean_episode_return"] = entry.mean_episode_return;
    j["episodes_finished"] = entry.episodes_finished;
    j["curriculum_progress"] = entry.curriculum_progress;
    j["surrogate"] = entry.metrics.surrogate;
    j["value_loss"] = entry.metrics.value_loss;
    j["entropy"] = entry.metrics.entropy;
    j["approx_kl"] = entry.metrics.approx_kl;
    j["clip_fraction"] = entry.metrics.clip_fraction;
    j["grad_norm"] = entry.metrics.grad_norm;
    j["lr"] = entry.metrics.lr;
    j["aborted"] = entry.metrics.aborted;
    if (entry.has_eval) {
      j["eval_success_rate"] = entry.eval_success_rate;
      j["eval_mean_distance"] = entry.eval_mean_distance;
    }
    emit(out, j);
  }
}

void write_cem_history(std::ostream& out, const CemResult& result) {
  size_t next = 0;
  for (const RefitRecord& refit : result.refits) {
    while (next < result.candidates.size() &&
           result.candidates[next].iteration <= refit.iteration) {
      const CandidateRecord& rec = result.candidates[next++];
      json j;
      j["record"] = "candidate";
      j["iteration"] = rec.iteration;
      j["index"] = rec.index;
      j["candidate"] = vec_json(rec.eval.candidate);
      j["returns"] = rec.eval.returns;
      j["average_return"] = rec.eval.average_return;
      j["out_of_workspace"] = rec.eval.out_of_workspace;
      j["elite"] = rec.elite;
      emit(out, j);
    }
    json j;
    j["record"] = "refit";
    j["iteration"] = refit.iteration;
    j["mean"] = vec_json(refit.space.mean);
    j["covariance"] = matrix_json(refit.space.covariance);
    j["elite_mean_return"] = refit.elite_mean_return;
    j["population_mean_return"] = refit.population_mean_return;
    j["covariance_norm"] = refit.covariance_norm;
    emit(out, j);
  }

  json j;
  j["record"] = "final";
  j["iterations"] = result.refits.size();
  j["converged"] = result.converged;
  j["mean"] = vec_json(result.space.mean);
  j["covariance"] = matrix_json(result.space.covariance);
  emit(out, j);
}

void write_trajectory(std::ostream& out, const EpisodeResult& episode,
                      const RewardWeights& weights) {
  const auto& steps = episode.trajectory;
  for (size_t t = 0; t < steps.size(); ++t) {
    const StepInfo& info = steps[t];
    const VecX prev = t == 0 ? VecX::Zero(info.applied_delta.size()).eval()
                             : steps[t - 1].applied_delta;
    const RewardTerms terms =
        step_reward_terms(info, info.applied_delta, prev, weights);
    json j;
    j["step"] = t;
    j["joints"] = vec_json(info.joints);
    j["action"] = vec_json(info.applied_delta);
    j["ee_position"] = vec_json(info.ee.position);
    j["ee_orientation"] = {info.ee.orientation.w(), info.ee.orientation.x(),
                           info.ee.orientation.y(), info.ee.orientation.z()};
    j["distance"] = info.distance;
    j["angle"] = info.angle;
    j["articulation"] = info.articulation;
    j["attached"] = info.attached;
    j["reward_distance"] = terms.dist;
    j["reward_orientation"] = terms.ori;
    j["reward_action"] = terms.act;
    j["reward"] = terms.total();
    emit(out, j);
  }
}

}  // namespace affkit
