#include "affkit/policy.hpp"

#include <cmath>

#include "affkit/rng.hpp"

namespace affkit {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kLog2Pi = 1.8378770664093454836;

std::string layer_name(int l, const std::string& suffix) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "layer%02d.", l);
  return buf + suffix;
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

MatX elu_mat(const MatX& x) { return x.unaryExpr([](double v) { return elu(v); }); }

MatX elu_grad_mat(const MatX& pre) {
  return pre.unaryExpr([](double v) { return elu_grad(v); });
}

MatX layernorm_forward(const MatX& x, const MatX& g, const MatX& b,
                       LayerNormCache* cache) {
  const Eigen::Index e = x.rows();
  MatX xhat(x.rows(), x.cols());
  VecX inv_std(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mu = x.col(c).mean();
    const double var = (x.col(c).array() - mu).square().sum() / static_cast<double>(e);
    const double is = 1.0 / std::sqrt(var + kLnEps);
    xhat.col(c) = ((x.col(c).array() - mu) * is).matrix();
    inv_std[c] = is;
  }
  MatX y = ((xhat.array().colwise() * g.col(0).array()).colwise() + b.col(0).array())
              .matrix();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

// Returns dx; accumulates parameter gradients into dgamma/dbeta.
MatX layernorm_backward(const MatX& dy, const MatX& g, const LayerNormCache& cache,
                        MatX& dgamma, MatX& dbeta) {
  const Eigen::Index e = dy.rows();
  dgamma.col(0) += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  dbeta.col(0) += dy.rowwise().sum();
  MatX dxhat = (dy.array().colwise() * g.col(0).array()).matrix();
  MatX dx(dy.rows(), dy.cols());
  for (Eigen::Index c = 0; c < dy.cols(); ++c) {
    const double m1 = dxhat.col(c).mean();
    const double m2 = (dxhat.col(c).array() * cache.xhat.col(c).array()).sum() /
                      static_cast<double>(e);
    dx.col(c) = (((dxhat.col(c).array() - m1) - cache.xhat.col(c).array() * m2) *
                 cache.inv_std[c])
                    .matrix();
  }
  return dx;
}

void softmax_rows_inplace(MatX& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

struct TensorSpec {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<TensorSpec> tensor_specs(const PolicyConfig& c) {
  std::vector<TensorSpec> specs;
  const Eigen::Index e = c.embed, f = c.ff, t = c.tokens();
  specs.push_back({"embed.keypoint.w", e, c.keypoint_width()});
  specs.push_back({"embed.keypoint.b", e, 1});
  specs.push_back({"embed.joint.w", e, c.joint_width()});
  specs.push_back({"embed.joint.b", e, 1});
  specs.push_back({"embed.pos", e, t});
  for (int l = 0; l < c.layers; ++l) {
    specs.push_back({layer_name(l, "ln1.g"), e, 1});
    specs.push_back({layer_name(l, "ln1.b"), e, 1});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      specs.push_back({layer_name(l, w), e, e});
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
      specs.push_back({layer_name(l, b), e, 1});
    }
    specs.push_back({layer_name(l, "ln2.g"), e, 1});
    specs.push_back({layer_name(l, "ln2.b"), e, 1});
    specs.push_back({layer_name(l, "ff.w1"), f, e});
    specs.push_back({layer_name(l, "ff.b1"), f, 1});
    specs.push_back({layer_name(l, "ff.w2"), e, f});
    specs.push_back({layer_name(l, "ff.b2"), e, 1});
  }
  specs.push_back({"final_ln.g", e, 1});
  specs.push_back({"final_ln.b", e, 1});
  specs.push_back({"actor.w1", c.actor_hidden, e});
  specs.push_back({"actor.b1", c.actor_hidden, 1});
  specs.push_back({"actor.w2", c.dof, c.actor_hidden});
  specs.push_back({"actor.b2", c.dof, 1});
  specs.push_back({"critic.w1", c.critic_hidden, e});
  specs.push_back({"critic.b1", c.critic_hidden, 1});
  specs.push_back({"critic.w2", 1, c.critic_hidden});
  specs.push_back({"critic.b2", 1, 1});
  specs.push_back({"log_std", c.dof, 1});
  return specs;
}

bool is_bias_like(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string last = dot == std::string::npos ? name : name.substr(dot + 1);
  return !last.empty() && last[0] == 'b';
}

bool is_ln_gain(const std::string& name) {
  return name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}

}  // namespace

void PolicyConfig::validate() const {
  if (layers < 1 || layers > 99) throw ConfigError("policy.layers", "must lie in 1..99");
  if (heads < 1) throw ConfigError("policy.heads", "must be >= 1");
  if (embed < 1 || embed % heads != 0) {
    throw ConfigError("policy.embed", "must be positive and divisible by heads");
  }
  if (ff < 1) throw ConfigError("policy.ff", "must be >= 1");
  if (actor_hidden < 1 || critic_hidden < 1) {
    throw ConfigError("policy.actor_hidden", "head widths must be >= 1");
  }
  if (dof < 1) throw ConfigError("policy.dof", "must be >= 1");
  if (history < 1 || history > kMaxActionHistory) {
    throw ConfigError("policy.history", "must lie in 1..4");
  }
  if (action_bound.size() != dof) {
    throw ConfigError("policy.action_bound", "needs one entry per joint");
  }
  if ((action_bound.array() <= 0.0).any()) {
    throw ConfigError("policy.action_bound", "entries must be > 0");
  }
}

const MatX& PolicyParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing parameter tensor: " + name);
  return it->second;
}

MatX& PolicyParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing parameter tensor: " + name);
  return it->second;
}

int64_t PolicyParams::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

PolicyParams init_policy(const PolicyConfig& config, uint64_t seed) {
  config.validate();
  PolicyParams p;
  p.config = config;
  for (const auto& spec : tensor_specs(config)) {
    p.tensors.emplace(spec.name, MatX::Zero(spec.rows, spec.cols));
  }
  Rng rng(seed);
  for (auto& [name, t] : p.tensors) {
    if (name == "log_std") {
      t.setConstant(config.logstd_init);
    } else if (is_ln_gain(name)) {
      t.setOnes();
    } else if (is_bias_like(name)) {
      t.setZero();
    } else {
      const double fan_in =
          name == "embed.pos" ? static_cast<double>(config.embed)
                              : static_cast<double>(t.cols());
      const double s = 1.0 / std::sqrt(fan_in);
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = rng.uniform(-s, s);
      }
    }
  }
  // Small actor output gain keeps initial means near zero and tanh unsaturated.
  p.at("actor.w2") *= 0.01;
  return p;
}

namespace {

void check_observation(const PolicyConfig& c, const Observation& obs) {
  if (obs.dof() != c.dof || obs.joint_width() != c.joint_width() ||
      obs.keypoint_token.size() != c.keypoint_width()) {
    throw ContractError("observation layout does not match policy config");
  }
}

// Embeds a whole batch: X has one column per (sample, token), sample-major.
MatX embed_batch(const PolicyParams& p, const MatX& kp_in, const MatX& joint_in) {
  const PolicyConfig& c = p.config;
  const Eigen::Index bsz = kp_in.cols();
  const int t = c.tokens();
  const MatX& pos = p.at("embed.pos");

  MatX xk = p.at("embed.keypoint.w") * kp_in;
  xk.colwise() += VecX(p.at("embed.keypoint.b").col(0) + pos.col(0));
  MatX xj = p.at("embed.joint.w") * joint_in;
  xj.colwise() += VecX(p.at("embed.joint.b").col(0));

  MatX x(c.embed, bsz * t);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    x.col(b * t) = xk.col(b);
    for (int j = 0; j < c.dof; ++j) {
      x.col(b * t + 1 + j) = xj.col(b * c.dof + j) + pos.col(1 + j);
    }
  }
  return x;
}

}  // namespace

MatX embed_tokens(const PolicyParams& params, const Observation& obs) {
  check_observation(params.config, obs);
  MatX kp_in = obs.keypoint_token;
  MatX joint_in = obs.joint_tokens.transpose();
  return embed_batch(params, kp_in, joint_in);
}

ForwardResult policy_forward(const PolicyParams& params,
                             const std::vector<Observation>& batch,
                             ForwardCache* cache) {
  const PolicyConfig& c = params.config;
  if (batch.empty()) throw ContractError("policy_forward: empty batch");
  for (const auto& obs : batch) check_observation(c, obs);

  const Eigen::Index bsz = static_cast<Eigen::Index>(batch.size());
  const int t = c.tokens();
  const int dh = c.embed / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  MatX kp_in(c.keypoint_width(), bsz);
  MatX joint_in(c.joint_width(), bsz * c.dof);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    kp_in.col(b) = batch[b].keypoint_token;
    for (int j = 0; j < c.dof; ++j) {
      joint_in.col(b * c.dof + j) = batch[b].joint_tokens.row(j).transpose();
    }
  }

  ForwardCache local;
  ForwardCache& cc = cache != nullptr ? *cache : local;
  cc.batch = static_cast<int>(bsz);
  cc.kp_in = kp_in;
  cc.joint_in = joint_in;
  cc.layers.assign(c.layers, LayerCache{});

  MatX x = embed_batch(params, kp_in, joint_in);

  for (int l = 0; l < c.layers; ++l) {
    LayerCache& lc = cc.layers[l];
    lc.x_in = x;
    lc.ln1_out = layernorm_forward(x, params.at(layer_name(l, "ln1.g")),
                                   params.at(layer_name(l, "ln1.b")), &lc.ln1);

    lc.q = params.at(layer_name(l, "attn.wq")) * lc.ln1_out;
    lc.q.colwise() += VecX(params.at(layer_name(l, "attn.bq")).col(0));
    lc.k = params.at(layer_name(l, "attn.wk")) * lc.ln1_out;
    lc.k.colwise() += VecX(params.at(layer_name(l, "attn.bk")).col(0));
    lc.v = params.at(layer_name(l, "attn.wv")) * lc.ln1_out;
    lc.v.colwise() += VecX(params.at(layer_name(l, "attn.bv")).col(0));

    lc.concat.resize(c.embed, bsz * t);
    lc.probs.assign(static_cast<size_t>(bsz) * c.heads, MatX());
    for (Eigen::Index b = 0; b < bsz; ++b) {
      for (int h = 0; h < c.heads; ++h) {
        const auto qb = lc.q.block(h * dh, b * t, dh, t);
        const auto kb = lc.k.block(h * dh, b * t, dh, t);
        const auto vb = lc.v.block(h * dh, b * t, dh, t);
        MatX s = (qb.transpose() * kb) * scale;
        softmax_rows_inplace(s);
        lc.concat.block(h * dh, b * t, dh, t) = vb * s.transpose();
        lc.probs[b * c.heads + h] = std::move(s);
      }
    }
    MatX attn = params.at(layer_name(l, "attn.wo")) * lc.concat;
    attn.colwise() += VecX(params.at(layer_name(l, "attn.bo")).col(0));
    lc.x_mid = lc.x_in + attn;

    lc.ln2_out = layernorm_forward(lc.x_mid, params.at(layer_name(l, "ln2.g")),
                                   params.at(layer_name(l, "ln2.b")), &lc.ln2);
    lc.ff_pre = params.at(layer_name(l, "ff.w1")) * lc.ln2_out;
    lc.ff_pre.colwise() += VecX(params.at(layer_name(l, "ff.b1")).col(0));
    lc.ff_act = elu_mat(lc.ff_pre);
    MatX ff_out = params.at(layer_name(l, "ff.w2")) * lc.ff_act;
    ff_out.colwise() += VecX(params.at(layer_name(l, "ff.b2")).col(0));
    x = lc.x_mid + ff_out;
  }

  MatX z =
      layernorm_forward(x, params.at("final_ln.g"), params.at("final_ln.b"), &cc.final_ln);
  cc.z0.resize(c.embed, bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) cc.z0.col(b) = z.col(b * t);

  cc.actor_pre = params.at("actor.w1") * cc.z0;
  cc.actor_pre.colwise() += VecX(params.at("actor.b1").col(0));
  cc.actor_act = elu_mat(cc.actor_pre);
  cc.mean_raw = params.at("actor.w2") * cc.actor_act;
  cc.mean_raw.colwise() += VecX(params.at("actor.b2").col(0));

  cc.critic_pre = params.at("critic.w1") * cc.z0;
  cc.critic_pre.colwise() += VecX(params.at("critic.b1").col(0));
  cc.critic_act = elu_mat(cc.critic_pre);
  MatX value_row = params.at("critic.w2") * cc.critic_act;
  value_row.array() += params.at("critic.b2")(0, 0);

  ForwardResult out;
  out.mean = (cc.mean_raw.array().tanh().colwise() * c.action_bound.array()).matrix();
  out.logstd = params.at("log_std").col(0);
  out.value = value_row.row(0).transpose();
  if (!out.mean.allFinite() || !out.value.allFinite() || !out.logstd.allFinite()) {
    throw NumericError("policy_forward: non-finite output");
  }
  return out;
}

GradMap policy_backward(const PolicyParams& params, const ForwardCache& cc,
                        const LossGrad& grad) {
  const PolicyConfig& c = params.config;
  const Eigen::Index bsz = cc.batch;
  if (bsz == 0) throw ContractError("policy_backward: empty cache");
  const int t = c.tokens();
  const int dh = c.embed / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (grad.dmean.rows() != c.dof || grad.dmean.cols() != bsz ||
      grad.dvalue.size() != bsz || grad.dlogstd.size() != c.dof) {
    throw ContractError("policy_backward: loss gradient shape mismatch");
  }

  GradMap g;
  for (const auto& [name, tns] : params.tensors) {
    g.emplace(name, MatX::Zero(tns.rows(), tns.cols()));
  }

  g.at("log_std").col(0) = grad.dlogstd;

  // Actor head: mean = bound * tanh(mean_raw).
  MatX tanh_raw = cc.mean_raw.array().tanh().matrix();
  MatX dmean_raw = ((grad.dmean.array() * (1.0 - tanh_raw.array().square()))
                        .colwise() *
                    c.action_bound.array())
                       .matrix();
  g.at("actor.w2") += dmean_raw * cc.actor_act.transpose();
  g.at("actor.b2").col(0) += dmean_raw.rowwise().sum();
  MatX dactor_act = params.at("actor.w2").transpose() * dmean_raw;
  MatX dactor_pre = (dactor_act.array() * elu_grad_mat(cc.actor_pre).array()).matrix();
  g.at("actor.w1") += dactor_pre * cc.z0.transpose();
  g.at("actor.b1").col(0) += dactor_pre.rowwise().sum();
  MatX dz0 = params.at("actor.w1").transpose() * dactor_pre;

  // Critic head.
  MatX dvalue_row = grad.dvalue.transpose();
  g.at("critic.w2") += dvalue_row * cc.critic_act.transpose();
  g.at("critic.b2")(0, 0) += dvalue_row.sum();
  MatX dcritic_act = params.at("critic.w2").transpose() * dvalue_row;
  MatX dcritic_pre =
      (dcritic_act.array() * elu_grad_mat(cc.critic_pre).array()).matrix();
  g.at("critic.w1") += dcritic_pre * cc.z0.transpose();
  g.at("critic.b1").col(0) += dcritic_pre.rowwise().sum();
  dz0 += params.at("critic.w1").transpose() * dcritic_pre;

  // Scatter keypoint-token gradients back into the token stream.
  MatX dz = MatX::Zero(c.embed, bsz * t);
  for (Eigen::Index b = 0; b < bsz; ++b) dz.col(b * t) = dz0.col(b);

  MatX dx = layernorm_backward(dz, params.at("final_ln.g"), cc.final_ln,
                               g.at("final_ln.g"), g.at("final_ln.b"));

  for (int l = c.layers - 1; l >= 0; --l) {
    const LayerCache& lc = cc.layers[l];

    // x_out = x_mid + ff(ln2(x_mid)); dx arrives as d(x_out).
    MatX dff_out = dx;
    g.at(layer_name(l, "ff.w2")) += dff_out * lc.ff_act.transpose();
    g.at(layer_name(l, "ff.b2")).col(0) += dff_out.rowwise().sum();
    MatX dff_act = params.at(layer_name(l, "ff.w2")).transpose() * dff_out;
    MatX dff_pre = (dff_act.array() * elu_grad_mat(lc.ff_pre).array()).matrix();
    g.at(layer_name(l, "ff.w1")) += dff_pre * lc.ln2_out.transpose();
    g.at(layer_name(l, "ff.b1")).col(0) += dff_pre.rowwise().sum();
    MatX dln2 = params.at(layer_name(l, "ff.w1")).transpose() * dff_pre;
    MatX dx_mid = dx + layernorm_backward(dln2, params.at(layer_name(l, "ln2.g")),
                                          lc.ln2, g.at(layer_name(l, "ln2.g")),
                                          g.at(layer_name(l, "ln2.b")));

    // x_mid = x_in + wo * concat + bo.
    MatX dattn = dx_mid;
    g.at(layer_name(l, "attn.wo")) += dattn * lc.concat.transpose();
    g.at(layer_name(l, "attn.bo")).col(0) += dattn.rowwise().sum();
    MatX dconcat = params.at(layer_name(l, "attn.wo")).transpose() * dattn;

    MatX dq = MatX::Zero(c.embed, bsz * t);
    MatX dk = MatX::Zero(c.embed, bsz * t);
    MatX dv = MatX::Zero(c.embed, bsz * t);
    for (Eigen::Index b = 0; b < bsz; ++b) {
      for (int h = 0; h < c.heads; ++h) {
        const MatX& p = lc.probs[b * c.heads + h];
        const auto qb = lc.q.block(h * dh, b * t, dh, t);
        const auto kb = lc.k.block(h * dh, b * t, dh, t);
        const auto vb = lc.v.block(h * dh, b * t, dh, t);
        const auto dob = dconcat.block(h * dh, b * t, dh, t);

        dv.block(h * dh, b * t, dh, t) = dob * p;
        MatX dp = dob.transpose() * vb;  // T x T, row = query token
        MatX ds(t, t);
        for (int r = 0; r < t; ++r) {
          const double dot = dp.row(r).dot(p.row(r));
          ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
        }
        dq.block(h * dh, b * t, dh, t) += kb * ds.transpose() * scale;
        dk.block(h * dh, b * t, dh, t) += qb * ds * scale;
      }
    }

    g.at(layer_name(l, "attn.wq")) += dq * lc.ln1_out.transpose();
    g.at(layer_name(l, "attn.bq")).col(0) += dq.rowwise().sum();
    g.at(layer_name(l, "attn.wk")) += dk * lc.ln1_out.transpose();
    g.at(layer_name(l, "attn.bk")).col(0) += dk.rowwise().sum();
    g.at(layer_name(l, "attn.wv")) += dv * lc.ln1_out.transpose();
    g.at(layer_name(l, "attn.bv")).col(0) += dv.rowwise().sum();

    MatX dln1 = params.at(layer_name(l, "attn.wq")).transpose() * dq +
                params.at(layer_name(l, "attn.wk")).transpose() * dk +
                params.at(layer_name(l, "attn.wv")).transpose() * dv;
    dx = dx_mid + layernorm_backward(dln1, params.at(layer_name(l, "ln1.g")), lc.ln1,
                                     g.at(layer_name(l, "ln1.g")),
                                     g.at(layer_name(l, "ln1.b")));
  }

  // Embedding layer: dx holds gradients for every token column.
  MatX dxk(c.embed, bsz);
  MatX dxj(c.embed, bsz * c.dof);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    dxk.col(b) = dx.col(b * t);
    g.at("embed.pos").col(0) += dx.col(b * t);
    for (int j = 0; j < c.dof; ++j) {
      dxj.col(b * c.dof + j) = dx.col(b * t + 1 + j);
      g.at("embed.pos").col(1 + j) += dx.col(b * t + 1 + j);
    }
  }
  g.at("embed.keypoint.w") += dxk * cc.kp_in.transpose();
  g.at("embed.keypoint.b").col(0) += dxk.rowwise().sum();
  g.at("embed.joint.w") += dxj * cc.joint_in.transpose();
  g.at("embed.joint.b").col(0) += dxj.rowwise().sum();

  for (const auto& [name, grad_tensor] : g) {
    if (!grad_tensor.allFinite()) {
      throw NumericError("policy_backward: non-finite gradient in " + name);
    }
  }
  return g;
}

SampledAction sample_action(const VecX& mean, const VecX& logstd, const VecX& bound,
                            uint64_t seed) {
  if (mean.size() != logstd.size() || mean.size() != bound.size()) {
    throw ContractError("sample_action: dimension mismatch");
  }
  if (!mean.allFinite() || !logstd.allFinite()) {
    throw ContractError("sample_action: non-finite inputs");
  }
  Rng rng(seed);
  SampledAction out;
  out.raw = mean + (logstd.array().exp() * rng.normal_vector(mean.size()).array()).matrix();
  out.logp = log_prob(mean, logstd, out.raw);
  out.action = out.raw.cwiseMin(bound).cwiseMax(-bound);
  return out;
}

double log_prob(const VecX& mean, const VecX& logstd, const VecX& action) {
  if (mean.size() != logstd.size() || mean.size() != action.size()) {
    throw ContractError("log_prob: dimension mismatch");
  }
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double z = (action[i] - mean[i]) / std::exp(logstd[i]);
    lp += -0.5 * z * z - logstd[i] - 0.5 * kLog2Pi;
  }
  return lp;
}

VecX log_prob_batch(const MatX& mean, const VecX& logstd, const MatX& actions) {
  if (mean.rows() != actions.rows() || mean.cols() != actions.cols() ||
      logstd.size() != mean.rows()) {
    throw ContractError("log_prob_batch: dimension mismatch");
  }
  VecX lp = VecX::Zero(mean.cols());
  for (Eigen::Index b = 0; b < mean.cols(); ++b) {
    lp[b] = log_prob(mean.col(b), logstd, actions.col(b));
  }
  return lp;
}

double gaussian_entropy(const VecX& logstd) {
  return logstd.sum() + 0.5 * (1.0 + kLog2Pi) * static_cast<double>(logstd.size());
}

}  // namespace affkit
