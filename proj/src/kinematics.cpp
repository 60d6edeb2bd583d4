#include "affkit/kinematics.hpp"

#include <cmath>

namespace affkit {

Pose::Pose(const Vec3& p, const Quat& q) : position(p) {
  const double n = q.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    throw ContractError("Pose: quaternion norm too small to normalize");
  }
  orientation = Quat(q.coeffs() / n);
  if (orientation.w() < 0.0) {
    orientation.coeffs() = -orientation.coeffs();
  }
}

KinematicChain::KinematicChain(std::vector<LinkSpec> links, Pose base)
    : links_(std::move(links)), base_(base) {
  if (links_.size() < 2) {
    throw ContractError("KinematicChain: needs at least 2 links");
  }
  for (size_t i = 0; i < links_.size(); ++i) {
    auto& l = links_[i];
    if (!(l.length > 0.0)) {
      throw ContractError("KinematicChain: link length must be > 0");
    }
    if (!(l.limit_lo < l.limit_hi)) {
      throw ContractError("KinematicChain: empty joint limit interval");
    }
    if (!(l.max_speed > 0.0)) {
      throw ContractError("KinematicChain: max joint speed must be > 0");
    }
    const double an = l.axis.norm();
    if (!(an > 1e-12)) {
      throw ContractError("KinematicChain: zero rotation axis");
    }
    l.axis /= an;
  }
}

double KinematicChain::reach() const {
  double r = 0.0;
  for (const auto& l : links_) r += l.length;
  return r;
}

JointVector KinematicChain::clamp_to_limits(const JointVector& q) const {
  if (q.size() != dof()) {
    throw ContractError("clamp_to_limits: joint vector dimension mismatch");
  }
  JointVector out = q;
  for (int i = 0; i < dof(); ++i) {
    out[i] = std::clamp(out[i], links_[i].limit_lo, links_[i].limit_hi);
  }
  return out;
}

VecX KinematicChain::step_bound() const {
  VecX b(dof());
  for (int i = 0; i < dof(); ++i) b[i] = links_[i].max_speed / kControlHz;
  return b;
}

VecX trig_encode(const JointVector& q) {
  VecX out(2 * q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    out[2 * i] = std::sin(q[i]);
    out[2 * i + 1] = std::cos(q[i]);
  }
  return out;
}

Pose forward_kinematics(const KinematicChain& chain, const JointVector& q) {
  return forward_kinematics_scaled(chain, q, VecX::Ones(chain.dof()));
}

Pose forward_kinematics_scaled(const KinematicChain& chain, const JointVector& q,
                               const VecX& scale) {
  if (q.size() != chain.dof()) {
    throw ContractError("forward_kinematics: joint vector dimension mismatch");
  }
  if (scale.size() != chain.dof()) {
    throw ContractError("forward_kinematics: link scale dimension mismatch");
  }
  Vec3 p = chain.base().position;
  Quat r = chain.base().orientation;
  for (int i = 0; i < chain.dof(); ++i) {
    const LinkSpec& l = chain.links()[i];
    r = r * Quat(Eigen::AngleAxisd(q[i], l.axis));
    p += r * Vec3(l.length * scale[i], 0.0, 0.0);
  }
  return Pose(p, r);
}

double geodesic_angle(const Quat& q1, const Quat& q2) {
  if (std::abs(q1.norm() - 1.0) > 1e-6 || std::abs(q2.norm() - 1.0) > 1e-6) {
    throw ContractError("geodesic_angle: inputs must be unit quaternions");
  }
  // 2*acos(|<q1,q2>|), written in atan2 form: acos is ill-conditioned near
  // |dot| = 1 and would turn the q vs -q identity into ~1e-8 noise.
  Eigen::Vector4d u = q1.coeffs();
  Eigen::Vector4d v = q2.coeffs();
  if (u.dot(v) < 0.0) v = -v;
  return 4.0 * std::atan2((u - v).norm(), (u + v).norm());
}

}  // namespace affkit
