#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "affkit/common.hpp"
#include "affkit/env.hpp"

namespace affkit {

struct PolicyConfig {
  int layers = 6;
  int heads = 3;
  int embed = 48;       // must be divisible by heads
  int ff = 192;         // feed-forward width, default 4x embed
  int actor_hidden = 64;
  int critic_hidden = 64;
  int dof = 3;
  EncodingMode encoding = EncodingMode::trig;
  int history = 1;
  double logstd_init = -0.7;
  VecX action_bound;  // per-joint action scale, dof entries

  int keypoint_width() const { return 7; }
  int joint_width() const {
    return (encoding == EncodingMode::trig ? 2 : 1) + history;
  }
  int tokens() const { return 1 + dof; }
  void validate() const;
};

/// Named parameter tensors; vectors are stored as n-by-1 matrices. Map order
/// (lexicographic) is the canonical iteration order everywhere: init,
/// optimizer state, checkpoints.
struct PolicyParams {
  PolicyConfig config;
  std::map<std::string, MatX> tensors;

  const MatX& at(const std::string& name) const;
  MatX& at(const std::string& name);
  int64_t parameter_count() const;
};

using GradMap = std::map<std::string, MatX>;

PolicyParams init_policy(const PolicyConfig& config, uint64_t seed);

/// Embedded token sequence for one observation, embed x tokens, before any
/// attention layer (keypoint embedder, joint embedder, position embeddings).
MatX embed_tokens(const PolicyParams& params, const Observation& obs);

struct LayerNormCache {
  MatX xhat;
  VecX inv_std;
};

struct LayerCache {
  MatX x_in;
  LayerNormCache ln1;
  MatX ln1_out;
  MatX q, k, v;
  std::vector<MatX> probs;  // one T x T attention matrix per (sample, head)
  MatX concat;              // heads reassembled, pre output-projection
  MatX x_mid;
  LayerNormCache ln2;
  MatX ln2_out;
  MatX ff_pre;
  MatX ff_act;
};

struct ForwardCache {
  int batch = 0;
  MatX kp_in;     // 7 x B
  MatX joint_in;  // joint_width x (B * dof)
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
  MatX z0;        // transformed keypoint token, embed x B
  MatX actor_pre, actor_act;
  MatX critic_pre, critic_act;
  MatX mean_raw;  // pre-tanh actor output, dof x B
};

struct ForwardResult {
  MatX mean;    // dof x B, already tanh-scaled to the action bound
  VecX logstd;  // dof, state-independent
  VecX value;   // B
};

ForwardResult policy_forward(const PolicyParams& params,
                             const std::vector<Observation>& batch,
                             ForwardCache* cache = nullptr);

/// Gradient of the scalar loss with respect to the network outputs; the
/// backward pass pulls it onto every parameter tensor.
struct LossGrad {
  MatX dmean;   // dof x B
  VecX dvalue;  // B
  VecX dlogstd; // dof
};

GradMap policy_backward(const PolicyParams& params, const ForwardCache& cache,
                        const LossGrad& grad);

struct SampledAction {
  VecX action;  // clipped to the bound
  VecX raw;     // pre-clip Gaussian sample; log_prob refers to this
  double logp;
};

SampledAction sample_action(const VecX& mean, const VecX& logstd, const VecX& bound,
                            uint64_t seed);
double log_prob(const VecX& mean, const VecX& logstd, const VecX& action);
VecX log_prob_batch(const MatX& mean, const VecX& logstd, const MatX& actions);
double gaussian_entropy(const VecX& logstd);

}  // namespace affkit
