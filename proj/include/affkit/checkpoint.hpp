#pragma once

#include <string>

#include "affkit/config.hpp"
#include "affkit/policy.hpp"

namespace affkit {

/// A trained actor-critic together with everything needed to rebuild and
/// audit it: the experiment config that produced it (plus its fingerprint),
/// the toolkit version, and the training seed.
struct Checkpoint {
  std::string tool_version;  // kVersion at save time
  uint64_t fingerprint = 0;  // config_fingerprint(config)
  uint64_t seed = 0;         // training seed that produced params
  ExperimentConfig config;
  PolicyParams params;
};

Checkpoint make_checkpoint(const ExperimentConfig& config, uint64_t seed,
                           PolicyParams params);

/// Binary container, little-endian: magic, format-version integer, toolkit
/// version, the composed PolicyConfig, the canonical experiment config,
/// fingerprint, seed, then (name, shape, 64-bit float data) triples in
/// canonical tensor order, terminated by an FNV-1a hash of all preceding
/// bytes. Identical checkpoints serialize to identical bytes.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Throws ConfigError naming the path on unreadable, foreign, truncated or
/// bit-flipped files (integrity hash mismatch), and on any disagreement
/// between the embedded config and the stored tensors.
Checkpoint load_checkpoint(const std::string& path);

/// Refinement/evaluation guard: the checkpoint must have been trained for
/// the given experiment. Throws ConfigError naming the first mismatched
/// dimension (dof, encoding, layer width, ...).
void check_checkpoint_compatible(const Checkpoint& checkpoint,
                                 const ExperimentConfig& config);

}  // namespace affkit
