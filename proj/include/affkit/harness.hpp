#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "affkit/cem.hpp"
#include "affkit/checkpoint.hpp"
#include "affkit/config.hpp"

namespace affkit {

/// One evaluation episode of a frozen actuator at a commanded keypoint.
struct TrialOutcome {
  AblationCell cell = AblationCell::full;
  uint64_t batch_seed = 0;  // seed batch the trial belongs to
  int trial = 0;
  bool perturbed = false;  // held-out world vs nominal simulation
  bool success = false;
  double final_distance = 0.0;
  double final_angle = 0.0;
  double articulation = 0.0;
  double task_return = 0.0;
};

/// Success rates of one (cell, seed batch) pair in both worlds.
struct CellReport {
  AblationCell cell = AblationCell::full;
  uint64_t batch_seed = 0;
  int trials = 0;
  int nominal_successes = 0;
  int perturbed_successes = 0;

  double nominal_rate() const;    // successes / trials, 0 when trials == 0
  double perturbed_rate() const;
};

/// Self-describing result of a pipeline or ablation-grid run. Success rates
/// recompute exactly from the outcome rows; identical config + seed gives
/// identical reports.
struct RunReport {
  std::string kind;          // "pipeline" or "ablation"
  std::string tool_version;  // kVersion
  uint64_t fingerprint = 0;  // config_fingerprint(config)
  uint64_t seed = 0;         // pipeline seed (0 for grids: seeds live in cells)
  std::vector<CellReport> cells;
  std::vector<TrialOutcome> outcomes;

  // Pipeline only: the refinement trajectory and where it ended.
  CemResult refinement;
  VecX final_keypoint;  // empty for grids
  // Refined keypoint left the box the actuator was trained on; results at
  // such keypoints are extrapolation and flagged rather than rejected.
  bool keypoint_outside_training_box = false;
};

/// Optional progress sink for long runs ("[train] cell full seed 101 ...");
/// purely informational, never part of the report.
using ProgressFn = std::function<void(const std::string&)>;

/// Trial success per scene kind: articulated objects require the final
/// articulation to reach 80% of travel; reach scenes require the final
/// distance below 2 cm over the last 10 steps.
bool trial_success(const Scene& scene, const std::vector<StepInfo>& trajectory);

/// Task-return objective the scene implies: articulation progress for
/// articulated objects, reach-hold (threshold = grasp radius) otherwise.
TaskReturnSpec task_spec_for(const Scene& scene);

/// Full closed-loop run: train the actuator on the scene, refine the
/// keypoint distribution from the scene's initial guess with the frozen
/// actuator, then evaluate it at the final mean for `harness.trials`
/// episodes in both the nominal and the perturbed world. Errors from the
/// stages are rethrown with a stage label. Training must never draw a
/// perturbation parameter; this is asserted via the env instrumentation
/// counter.
RunReport run_pipeline(const ExperimentConfig& config, uint64_t seed,
                       const ProgressFn& progress = {});

/// Ablation grid: per seed batch and cell, train one actuator (no-DR trains
/// with randomization disabled; no-TE uses raw joint encoding in training
/// and evaluation), then evaluate every cell at the scene's true affordance
/// in the same nominal and perturbed worlds.
RunReport run_ablation_grid(const ExperimentConfig& config,
                            const ProgressFn& progress = {});

/// Whole-file JSON report: header fields, cells, outcome rows, refinement
/// history. Byte-identical for identical reports.
void write_report(std::ostream& out, const RunReport& report);

/// Human-readable success-rate table: one row per cell with nominal and
/// perturbed columns, per-batch breakdown, and the labeled nominal-world
/// sanity gap between full and no-DR (not a paper claim).
std::string format_table(const RunReport& report);

}  // namespace affkit
