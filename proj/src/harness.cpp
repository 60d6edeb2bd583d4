#include "affkit/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <utility>

#include "affkit/parallel.hpp"
#include "affkit/ppo.hpp"
#include "affkit/rng.hpp"
#include "affkit/rollout.hpp"
#include "affkit/version.hpp"
#include "json.hpp"

namespace affkit {
namespace {

using nlohmann::json;

// Seed-stream tags (single byte space shared with the other modules).
constexpr uint64_t kTrainTag = 0x50;
constexpr uint64_t kRefineTag = 0x51;
constexpr uint64_t kTrialTag = 0x52;

constexpr double kArticulationSuccessFraction = 0.8;
constexpr int kReachHoldSteps = 10;

// Rethrows stage failures with a stage label, preserving the error family
// (and with it the CLI exit code).
template <typename F>
auto stage(const char* name, const ProgressFn& progress, F&& f) {
  if (progress) progress(std::string("[") + name + "] starting");
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError("", std::string("[") + name + "] " + e.what());
  } catch (const OutOfWorkspaceError& e) {
    throw OutOfWorkspaceError(std::string("[") + name + "] " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string("[") + name + "] " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(std::string("[") + name + "] " + e.what());
  }
}

// Trains with the perturbation-instrumentation assertion around the call:
// no cell, ever, may sample the held-out world during training.
TrainResult guarded_train(const Scene& scene, const DomainRandomizationConfig& dr,
                          const ExperimentConfig& config,
                          const PolicyConfig& policy, uint64_t seed,
                          const char* label, const ProgressFn& progress) {
  const uint64_t before = perturbation_draw_count();
  std::function<void(const TrainLogEntry&)> on_update;
  if (progress) {
    const std::string prefix = std::string("[") + label + "] ";
    const int total = config.ppo.total_updates;
    on_update = [progress, prefix, total](const TrainLogEntry& entry) {
      if (!entry.has_eval) return;
      std::ostringstream line;
      line << prefix << "update " << entry.update + 1 << "/" << total
           << "  return " << std::fixed << std::setprecision(3)
           << entry.mean_episode_return << "  eval "
           << std::setprecision(1) << 100.0 * entry.eval_success_rate
           << "%  d " << std::setprecision(4) << entry.eval_mean_distance;
      progress(line.str());
    };
  }
  TrainResult result = stage(label, progress, [&] {
    return train(scene, dr, config.reward.curriculum, policy, config.ppo, seed,
                 on_update);
  });
  if (perturbation_draw_count() != before) {
    throw ContractError(std::string("[") + label +
                        "] perturbation parameters were drawn during training");
  }
  return result;
}

struct WorldEval {
  std::vector<TrialOutcome> outcomes;
  int successes = 0;
};

// Runs `trials` greedy episodes of the frozen actuator at `keypoint` in one
// world. Trial t uses the caller-supplied derived seed stream, so two cells
// evaluated with the same (batch, world, trial) indices face the same world
// draws. Trials run in parallel; results are reduced in trial order.
WorldEval evaluate_world(const Env& env, const PolicyParams& params,
                         const Scene& scene, const Vec3& keypoint,
                         const TaskReturnSpec& task, int trials,
                         AblationCell cell, uint64_t batch_seed, bool perturbed,
                         const std::function<uint64_t(int)>& trial_seed,
                         int jobs) {
  WorldEval eval;
  eval.outcomes.resize(static_cast<size_t>(std::max(trials, 0)));
  if (trials <= 0) return eval;

  EpisodeConfig episode;
  episode.obs_spec.encoding = params.config.encoding;
  episode.obs_spec.history = params.config.history;

  std::mutex failure_mutex;
  std::exception_ptr failure;
  parallel_chunks(trials, 1, jobs, [&](int, int begin, int end) {
    for (int t = begin; t < end; ++t) {
      try {
        const EpisodeResult res =
            run_episode(env, params, episode, keypoint, trial_seed(t));
        TrialOutcome& outcome = eval.outcomes[static_cast<size_t>(t)];
        outcome.cell = cell;
        outcome.batch_seed = batch_seed;
        outcome.trial = t;
        outcome.perturbed = perturbed;
        outcome.success = trial_success(scene, res.trajectory);
        outcome.final_distance = res.final_distance;
        outcome.final_angle = res.final_angle;
        outcome.articulation =
            res.trajectory.empty() ? 0.0 : res.trajectory.back().articulation;
        outcome.task_return = task_return(res.trajectory, task);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  });
  if (failure) std::rethrow_exception(failure);

  for (const TrialOutcome& outcome : eval.outcomes)
    eval.successes += outcome.success ? 1 : 0;
  return eval;
}

std::string cell_label(AblationCell cell) { return to_string(cell); }

json outcome_json(const TrialOutcome& o) {
  json j;
  j["cell"] = cell_label(o.cell);
  j["batch_seed"] = o.batch_seed;
  j["trial"] = o.trial;
  j["perturbed"] = o.perturbed;
  j["success"] = o.success;
  j["final_distance"] = o.final_distance;
  j["final_angle"] = o.final_angle;
  j["articulation"] = o.articulation;
  j["task_return"] = o.task_return;
  return j;
}

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

}  // namespace

double CellReport::nominal_rate() const {
  return trials > 0 ? static_cast<double>(nominal_successes) / trials : 0.0;
}

double CellReport::perturbed_rate() const {
  return trials > 0 ? static_cast<double>(perturbed_successes) / trials : 0.0;
}

bool trial_success(const Scene& scene, const std::vector<StepInfo>& trajectory) {
  if (trajectory.empty()) return false;
  if (scene.object.type != ArticulationType::none) {
    return trajectory.back().articulation >=
           kArticulationSuccessFraction * scene.object.travel;
  }
  const size_t hold =
      std::min(trajectory.size(), static_cast<size_t>(kReachHoldSteps));
  for (size_t i = trajectory.size() - hold; i < trajectory.size(); ++i) {
    if (!(trajectory[i].distance < kReachDistanceThreshold)) return false;
  }
  return true;
}

TaskReturnSpec task_spec_for(const Scene& scene) {
  TaskReturnSpec spec;
  if (scene.object.type != ArticulationType::none) {
    spec.kind = TaskReturnKind::articulation_progress;
    spec.travel = scene.object.travel;
  } else {
    spec.kind = TaskReturnKind::reach_hold;
    spec.threshold = scene.grasp_radius;
  }
  return spec;
}

RunReport run_pipeline(const ExperimentConfig& config, uint64_t seed,
                       const ProgressFn& progress) {
  stage("config", progress, [&] { config.validate(); return 0; });
  const Scene scene = config.scene.to_scene();
  const TaskReturnSpec task = task_spec_for(scene);

  RunReport report;
  report.kind = "pipeline";
  report.tool_version = kVersion;
  report.fingerprint = config_fingerprint(config);
  report.seed = seed;

  const TrainResult trained =
      guarded_train(scene, config.harness.dr, config, composed_policy(config),
                    derive_seed({seed, kTrainTag}), "train", progress);

  // Refinement rolls out in the training distribution (domain randomization
  // on, perturbation never), so candidate returns reflect the uncertainty
  // the actuator was trained under.
  const Env refine_env(scene, config.harness.dr, PerturbationConfig{});
  EpisodeConfig episode;
  episode.obs_spec.encoding = trained.params.config.encoding;
  episode.obs_spec.history = trained.params.config.history;
  report.refinement = stage("refine", progress, [&] {
    return optimize(config.cem.initial_space(scene.initial_guess),
                    trained.params, refine_env, episode, task,
                    config.cem.config, derive_seed({seed, kRefineTag}));
  });
  report.final_keypoint = report.refinement.space.mean;

  const Vec3 final_position = report.final_keypoint.head(3);
  report.keypoint_outside_training_box =
      ((final_position - scene.initial_guess).cwiseAbs().array() >
       config.ppo.keypoint_halfwidth.array())
          .any();

  const Scene eval_scene = scene_for_candidate(scene, report.final_keypoint);
  DomainRandomizationConfig no_dr;
  no_dr.enabled = false;
  PerturbationConfig no_perturbation;
  no_perturbation.enabled = false;
  const Env nominal(eval_scene, no_dr, no_perturbation);
  PerturbationConfig held_out = config.harness.perturbation;
  held_out.enabled = true;
  const Env perturbed(eval_scene, no_dr, held_out);

  CellReport cell;
  cell.cell = AblationCell::full;
  cell.batch_seed = seed;
  cell.trials = config.harness.trials;
  stage("evaluate", progress, [&] {
    for (const bool world_perturbed : {false, true}) {
      const WorldEval eval = evaluate_world(
          world_perturbed ? perturbed : nominal, trained.params, eval_scene,
          final_position, task, config.harness.trials, AblationCell::full,
          seed, world_perturbed,
          [&](int t) {
            return derive_seed({seed, kTrialTag,
                                static_cast<uint64_t>(world_perturbed),
                                static_cast<uint64_t>(t)});
          },
          config.ppo.jobs);
      (world_perturbed ? cell.perturbed_successes : cell.nominal_successes) =
          eval.successes;
      report.outcomes.insert(report.outcomes.end(), eval.outcomes.begin(),
                             eval.outcomes.end());
    }
    return 0;
  });
  report.cells.push_back(cell);
  return report;
}

RunReport run_ablation_grid(const ExperimentConfig& config,
                            const ProgressFn& progress) {
  stage("config", progress, [&] { config.validate(); return 0; });
  const Scene scene = config.scene.to_scene();
  const TaskReturnSpec task = task_spec_for(scene);

  RunReport report;
  report.kind = "ablation";
  report.tool_version = kVersion;
  report.fingerprint = config_fingerprint(config);

  DomainRandomizationConfig no_dr;
  no_dr.enabled = false;
  PerturbationConfig no_perturbation;
  no_perturbation.enabled = false;
  PerturbationConfig held_out = config.harness.perturbation;
  held_out.enabled = true;

  for (const uint64_t batch_seed : config.harness.seeds) {
    for (const AblationCell cell_kind : config.harness.cells) {
      ExperimentConfig cell_config = config;
      if (cell_kind == AblationCell::no_te)
        cell_config.policy.encoding = EncodingMode::raw;
      const DomainRandomizationConfig train_dr =
          cell_kind == AblationCell::no_dr ? no_dr : config.harness.dr;

      std::ostringstream label;
      label << "train " << cell_label(cell_kind) << " seed " << batch_seed;
      const TrainResult trained = guarded_train(
          scene, train_dr, cell_config, composed_policy(cell_config),
          derive_seed({batch_seed, kTrainTag,
                       static_cast<uint64_t>(cell_kind)}),
          label.str().c_str(), progress);

      CellReport cell;
      cell.cell = cell_kind;
      cell.batch_seed = batch_seed;
      cell.trials = config.harness.trials;
      stage("evaluate", progress, [&] {
        for (const bool world_perturbed : {false, true}) {
          // Trial seeds deliberately exclude the cell: every cell faces the
          // same sequence of world draws within a batch.
          const WorldEval eval = evaluate_world(
              world_perturbed ? Env(scene, no_dr, held_out)
                              : Env(scene, no_dr, no_perturbation),
              trained.params, scene, scene.true_affordance, task,
              config.harness.trials, cell_kind, batch_seed, world_perturbed,
              [&](int t) {
                return derive_seed({batch_seed, kTrialTag,
                                    static_cast<uint64_t>(world_perturbed),
                                    static_cast<uint64_t>(t)});
              },
              config.ppo.jobs);
          (world_perturbed ? cell.perturbed_successes
                           : cell.nominal_successes) = eval.successes;
          report.outcomes.insert(report.outcomes.end(), eval.outcomes.begin(),
                                 eval.outcomes.end());
        }
        return 0;
      });
      report.cells.push_back(cell);
      if (progress) {
        std::ostringstream done;
        done << "[grid] " << cell_label(cell_kind) << " seed " << batch_seed
             << ": nominal " << cell.nominal_successes << "/" << cell.trials
             << ", perturbed " << cell.perturbed_successes << "/"
             << cell.trials;
        progress(done.str());
      }
    }
  }
  return report;
}

void write_report(std::ostream& out, const RunReport& report) {
  json j;
  j["artifact"] = "run_report";
  j["kind"] = report.kind;
  j["version"] = report.tool_version;
  j["fingerprint"] = hex_fingerprint(report.fingerprint);
  j["seed"] = report.seed;

  j["cells"] = json::array();
  for (const CellReport& cell : report.cells) {
    json c;
    c["cell"] = cell_label(cell.cell);
    c["batch_seed"] = cell.batch_seed;
    c["trials"] = cell.trials;
    c["nominal_successes"] = cell.nominal_successes;
    c["perturbed_successes"] = cell.perturbed_successes;
    c["nominal_rate"] = cell.nominal_rate();
    c["perturbed_rate"] = cell.perturbed_rate();
    j["cells"].push_back(std::move(c));
  }

  j["outcomes"] = json::array();
  for (const TrialOutcome& outcome : report.outcomes)
    j["outcomes"].push_back(outcome_json(outcome));

  if (report.kind == "pipeline") {
    json r;
    r["final_mean"] = vec_json(report.refinement.space.mean);
    r["final_covariance"] = matrix_json(report.refinement.space.covariance);
    r["converged"] = report.refinement.converged;
    r["iterations"] = report.refinement.refits.size();
    r["refits"] = json::array();
    for (const RefitRecord& refit : report.refinement.refits) {
      json record;
      record["iteration"] = refit.iteration;
      record["mean"] = vec_json(refit.space.mean);
      record["elite_mean_return"] = refit.elite_mean_return;
      record["population_mean_return"] = refit.population_mean_return;
      record["covariance_norm"] = refit.covariance_norm;
      r["refits"].push_back(std::move(record));
    }
    j["refinement"] = std::move(r);
    j["final_keypoint"] = vec_json(report.final_keypoint);
    j["keypoint_outside_training_box"] = report.keypoint_outside_training_box;
  }

  // Sanity gap, nominal world, full vs no-DR: a small gap is expected when
  // randomization costs little in-distribution. Not a paper claim.
  double full_nominal = 0.0;
  double no_dr_nominal = 0.0;
  int full_batches = 0;
  int no_dr_batches = 0;
  for (const CellReport& cell : report.cells) {
    if (cell.cell == AblationCell::full) {
      full_nominal += cell.nominal_rate();
      ++full_batches;
    } else if (cell.cell == AblationCell::no_dr) {
      no_dr_nominal += cell.nominal_rate();
      ++no_dr_batches;
    }
  }
  if (full_batches > 0 && no_dr_batches > 0) {
    json sanity;
    sanity["full_vs_no_dr_nominal_gap"] =
        full_nominal / full_batches - no_dr_nominal / no_dr_batches;
    sanity["label"] =
        "sanity check, not a paper claim: DR's in-distribution cost";
    j["sanity"] = std::move(sanity);
  }

  out << j.dump(2) << '\n';
}

std::string format_table(const RunReport& report) {
  std::ostringstream out;
  out << "cell    batch       nominal  perturbed\n";
  char line[128];
  for (const CellReport& cell : report.cells) {
    std::snprintf(line, sizeof(line), "%-7s %-10llu %6.1f%%    %6.1f%%\n",
                  cell_label(cell.cell).c_str(),
                  static_cast<unsigned long long>(cell.batch_seed),
                  100.0 * cell.nominal_rate(), 100.0 * cell.perturbed_rate());
    out << line;
  }

  // Aggregate rows (mean over seed batches) in cell declaration order.
  std::vector<AblationCell> seen;
  for (const CellReport& cell : report.cells)
    if (std::find(seen.begin(), seen.end(), cell.cell) == seen.end())
      seen.push_back(cell.cell);
  if (report.cells.size() > seen.size()) {
    out << "---\n";
    for (const AblationCell kind : seen) {
      double nominal = 0.0;
      double perturbed = 0.0;
      int batches = 0;
      for (const CellReport& cell : report.cells) {
        if (cell.cell != kind) continue;
        nominal += cell.nominal_rate();
        perturbed += cell.perturbed_rate();
        ++batches;
      }
      std::snprintf(line, sizeof(line), "%-7s %-10s %6.1f%%    %6.1f%%\n",
                    cell_label(kind).c_str(), "mean", 100.0 * nominal / batches,
                    100.0 * perturbed / batches);
      out << line;
    }
  }
  if (report.kind == "pipeline" && report.keypoint_outside_training_box) {
    out << "note: refined keypoint lies outside the actuator's training box; "
           "evaluation extrapolates\n";
  }
  return out.str();
}

}  // namespace affkit
