// Copyright 2026 The mfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MFUSE_GEOMETRY_HPP_
#define MFUSE_GEOMETRY_HPP_

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Conventions used throughout the library:
//  - Hamilton quaternions, q = w + xi + yj + zk.
//  - q_AB rotates vectors expressed in frame B into frame A: v_A = q_AB * v_B.
//  - Tangent perturbations are applied on the right: q (+) d = q * Exp(d).

/// Skew-symmetric cross-product matrix, skew(a) * b == a.cross(b).
Mat3 skew(const Vec3& v);

/// SO(3) right Jacobian and its inverse for rotation vector `phi`.
Mat3 rightJacobian(const Vec3& phi);
Mat3 rightJacobianInverse(const Vec3& phi);

class UnitQuaternion {
 public:
  UnitQuaternion() : q_(Eigen::Quaterniond::Identity()) {}
  /// Normalizes the input. Throws std::invalid_argument on a zero or
  /// non-finite quaternion.
  UnitQuaternion(double w, double x, double y, double z);
  explicit UnitQuaternion(const Eigen::Quaterniond& q);

  static UnitQuaternion identity() { return UnitQuaternion(); }
  static UnitQuaternion exp(const Vec3& rotation_vector);
  static UnitQuaternion fromAxisAngle(const Vec3& axis, double angle);
  static UnitQuaternion fromRotationMatrix(const Mat3& R);
  static UnitQuaternion rotX(double angle);
  static UnitQuaternion rotY(double angle);
  static UnitQuaternion rotZ(double angle);
  /// Standard aerospace Z-Y-X Euler angles: R = Rz(yaw) Ry(pitch) Rx(roll).
  static UnitQuaternion fromRollPitchYaw(double roll, double pitch, double yaw);
  /// Tilt-then-heading composition Exp([roll, pitch, 0]) * Rz(yaw). The
  /// heading part is exactly the twist about local z (see twistAngle).
  static UnitQuaternion fromTiltHeading(double roll, double pitch, double yaw);

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  /// Rotation vector with angle in [0, pi].
  Vec3 log() const;
  double angle() const { return log().norm(); }

  UnitQuaternion inverse() const { return UnitQuaternion(q_.conjugate(), kNoNormalize); }
  UnitQuaternion operator*(const UnitQuaternion& other) const;
  Vec3 operator*(const Vec3& v) const { return q_ * v; }
  Vec3 rotate(const Vec3& v) const { return q_ * v; }
  Mat3 matrix() const { return q_.toRotationMatrix(); }

  /// Rotational equality; q and -q are the same rotation.
  bool isApprox(const UnitQuaternion& other, double tol = 1e-9) const;
  double angularDistance(const UnitQuaternion& other) const;

  const Eigen::Quaterniond& eigen() const { return q_; }

 private:
  struct NoNormalize {};
  static constexpr NoNormalize kNoNormalize{};
  UnitQuaternion(const Eigen::Quaterniond& q, NoNormalize) : q_(q) {}

  Eigen::Quaterniond q_;
};

/// Retraction: q * Exp(delta).
UnitQuaternion boxplus(const UnitQuaternion& q, const Vec3& delta);
/// Local coordinates of a relative to b: Log(b^-1 * a).
Vec3 boxminus(const UnitQuaternion& a, const UnitQuaternion& b);

/// Spherical linear interpolation, s in [0, 1].
UnitQuaternion slerp(const UnitQuaternion& a, const UnitQuaternion& b, double s);

/// Signed angle of the twist component of q about unit `axis` under the
/// swing-twist split q = swing * twist, twist = rotation about `axis`.
double twistAngle(const UnitQuaternion& q, const Vec3& axis);

/// Rigid transform T_AB: p_A = rotation * p_B + translation.
struct RigidTransform {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const UnitQuaternion& q, const Vec3& t) : rotation(q), translation(t) {}

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& other) const;
  bool isApprox(const RigidTransform& other, double tol = 1e-9) const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

double degToRad(double deg);
double radToDeg(double rad);

}  // namespace mfuse

#endif  // MFUSE_GEOMETRY_HPP_
