#pragma once

#include <vector>

#include "affkit/common.hpp"

namespace affkit {

/// Rigid pose: position in meters plus a unit quaternion. Construction
/// normalizes and canonicalizes the sign so the scalar part is >= 0
/// (both q and -q describe the same rotation).
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Pose() = default;
  Pose(const Vec3& p, const Quat& q);
};

/// One revolute link: rotate about `axis` by the joint angle, then extend
/// `length` meters along the local x axis.
struct LinkSpec {
  double length = 0.0;         // meters, > 0
  Vec3 axis = Vec3::UnitZ();   // unit rotation axis in the link frame
  double limit_lo = -kPi;      // radians
  double limit_hi = kPi;
  double max_speed = 1.0;      // radians/second, > 0
};

using JointVector = VecX;  // radians, one entry per joint

/// Serial revolute chain. Validates on construction: at least 2 links,
/// positive lengths and speeds, nonempty limit intervals, unit axes.
class KinematicChain {
 public:
  KinematicChain() = default;
  KinematicChain(std::vector<LinkSpec> links, Pose base);

  int dof() const { return static_cast<int>(links_.size()); }
  const std::vector<LinkSpec>& links() const { return links_; }
  const Pose& base() const { return base_; }

  /// Sum of link lengths: radius of the reachable sphere around the base.
  double reach() const;

  JointVector clamp_to_limits(const JointVector& q) const;

  /// Per-step delta bound at the control rate: max_speed / kControlHz.
  VecX step_bound() const;

 private:
  std::vector<LinkSpec> links_;
  Pose base_;
};

/// (sin, cos) pair per joint, flattened: output length = 2 * dof.
VecX trig_encode(const JointVector& q);

/// End-effector pose from composing per-link rigid transforms in order.
/// Throws ContractError on dimension mismatch.
Pose forward_kinematics(const KinematicChain& chain, const JointVector& q);

/// Same, with per-link length multipliers (domain randomization / kinematic
/// perturbation). `scale` must have one entry per link.
Pose forward_kinematics_scaled(const KinematicChain& chain, const JointVector& q,
                               const VecX& scale);

/// Rotation distance 2*acos(|<q1, q2>|) in [0, pi]. Inputs must be unit
/// within 1e-6 (ContractError otherwise); the inner product is clamped to
/// [-1, 1] before acos.
double geodesic_angle(const Quat& q1, const Quat& q2);

}  // namespace affkit
