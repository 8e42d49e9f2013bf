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

#include "mfuse/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mfuse {

namespace {

constexpr double kSmallAngle = 1e-8;

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 rightJacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * K + K * K / 6.0;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

Mat3 rightJacobianInverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * K + K * K / 12.0;
  }
  const double t2 = theta * theta;
  const double coeff =
      1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * K + coeff * K * K;
}

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z)
    : UnitQuaternion(Eigen::Quaterniond(w, x, y, z)) {}

UnitQuaternion::UnitQuaternion(const Eigen::Quaterniond& q) : q_(q) {
  const double n = q_.norm();
  if (!std::isfinite(n) || n < 1e-300) {
    throw std::invalid_argument("UnitQuaternion: zero or non-finite quaternion");
  }
  q_.coeffs() /= n;
}

UnitQuaternion UnitQuaternion::exp(const Vec3& rotation_vector) {
  const double theta = rotation_vector.norm();
  if (theta < kSmallAngle) {
    // Second-order series; the constructor renormalizes.
    const Vec3 half = 0.5 * rotation_vector;
    return UnitQuaternion(1.0 - theta * theta / 8.0, half.x(), half.y(), half.z());
  }
  const double s = std::sin(0.5 * theta) / theta;
  return UnitQuaternion(std::cos(0.5 * theta), s * rotation_vector.x(),
                        s * rotation_vector.y(), s * rotation_vector.z());
}

UnitQuaternion UnitQuaternion::fromAxisAngle(const Vec3& axis, double angle) {
  return exp(axis.normalized() * angle);
}

UnitQuaternion UnitQuaternion::fromRotationMatrix(const Mat3& R) {
  return UnitQuaternion(Eigen::Quaterniond(R));
}

UnitQuaternion UnitQuaternion::rotX(double angle) { return exp(Vec3(angle, 0.0, 0.0)); }
UnitQuaternion UnitQuaternion::rotY(double angle) { return exp(Vec3(0.0, angle, 0.0)); }
UnitQuaternion UnitQuaternion::rotZ(double angle) { return exp(Vec3(0.0, 0.0, angle)); }

UnitQuaternion UnitQuaternion::fromRollPitchYaw(double roll, double pitch, double yaw) {
  return rotZ(yaw) * rotY(pitch) * rotX(roll);
}

UnitQuaternion UnitQuaternion::fromTiltHeading(double roll, double pitch, double yaw) {
  return exp(Vec3(roll, pitch, 0.0)) * rotZ(yaw);
}

Vec3 UnitQuaternion::log() const {
  // Canonical hemisphere w >= 0 gives angle in [0, pi].
  double w = q_.w();
  Vec3 v = q_.vec();
  if (w < 0.0) {
    w = -w;
    v = -v;
  }
  const double n = v.norm();
  if (n < kSmallAngle) {
    // atan2(n, w) / n ~ 1 / w for small n.
    return (2.0 / w) * v;
  }
  const double theta = 2.0 * std::atan2(n, w);
  return (theta / n) * v;
}

UnitQuaternion UnitQuaternion::operator*(const UnitQuaternion& other) const {
  Eigen::Quaterniond r = q_ * other.q_;
  r.coeffs() /= r.norm();
  return UnitQuaternion(r, kNoNormalize);
}

bool UnitQuaternion::isApprox(const UnitQuaternion& other, double tol) const {
  return angularDistance(other) <= tol;
}

double UnitQuaternion::angularDistance(const UnitQuaternion& other) const {
  return boxminus(*this, other).norm();
}

UnitQuaternion boxplus(const UnitQuaternion& q, const Vec3& delta) {
  return q * UnitQuaternion::exp(delta);
}

Vec3 boxminus(const UnitQuaternion& a, const UnitQuaternion& b) {
  return (b.inverse() * a).log();
}

UnitQuaternion slerp(const UnitQuaternion& a, const UnitQuaternion& b, double s) {
  return boxplus(a, s * boxminus(b, a));
}

double twistAngle(const UnitQuaternion& q, const Vec3& axis) {
  const Vec3 n = axis.normalized();
  const double proj = q.eigen().vec().dot(n);
  double angle = 2.0 * std::atan2(proj, q.w());
  // Wrap into (-pi, pi].
  constexpr double kPi = std::numbers::pi;
  while (angle > kPi) angle -= 2.0 * kPi;
  while (angle <= -kPi) angle += 2.0 * kPi;
  return angle;
}

RigidTransform RigidTransform::inverse() const {
  const UnitQuaternion inv = rotation.inverse();
  return {inv, -(inv * translation)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

bool RigidTransform::isApprox(const RigidTransform& other, double tol) const {
  return rotation.isApprox(other.rotation, tol) &&
         (translation - other.translation).norm() <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

double degToRad(double deg) { return deg * std::numbers::pi / 180.0; }
double radToDeg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace mfuse
