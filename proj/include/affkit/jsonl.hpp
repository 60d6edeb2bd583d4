#pragma once

#include <ostream>
#include <string_view>
#include <vector>

#include "affkit/cem.hpp"
#include "affkit/ppo.hpp"
#include "affkit/reward.hpp"
#include "affkit/rollout.hpp"

namespace affkit {

/// Every JSON-lines artifact opens with a self-describing header line
/// carrying the artifact kind, toolkit version and config fingerprint
/// (as 16 hex digits). All lines are single-line JSON with sorted keys,
/// so identical runs produce identical files.
void write_artifact_header(std::ostream& out, std::string_view kind,
                           uint64_t fingerprint);

/// One line per PPO update; evaluation fields appear on updates that ran one.
void write_training_log(std::ostream& out, const std::vector<TrainLogEntry>& log);

/// Chronological optimizer history: every scored candidate of an iteration,
/// then the refit it produced, then a final summary line.
void write_cem_history(std::ostream& out, const CemResult& result);

/// One record per executed step: joints, applied action, end-effector pose,
/// per-term reward values under `weights`, and the articulation coordinate.
void write_trajectory(std::ostream& out, const EpisodeResult& episode,
                      const RewardWeights& weights);

}  // namespace affkit
