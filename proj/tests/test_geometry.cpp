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


#include <cmath>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "mfuse/geometry.hpp"

namespace mfuse {
namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 randomVector(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

UnitQuaternion randomRotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return UnitQuaternion(n(rng), n(rng), n(rng), n(rng));
}

double norm(const UnitQuaternion& q) { return q.eigen().coeffs().norm(); }

TEST(UnitQuaternion, ConstructorsNormalize) {
  EXPECT_NEAR(norm(UnitQuaternion(2.0, 0.0, 0.0, 0.0)), 1.0, 1e-12);
  EXPECT_NEAR(norm(UnitQuaternion(1.0, 2.0, -3.0, 4.0)), 1.0, 1e-12);
  EXPECT_NEAR(norm(UnitQuaternion(Eigen::Quaterniond(0.0, 5.0, 0.0, 0.0))), 1.0, 1e-12);
  EXPECT_NEAR(norm(UnitQuaternion::exp(Vec3(3.0, -1.0, 0.5))), 1.0, 1e-12);
  EXPECT_NEAR(norm(UnitQuaternion::fromAxisAngle(Vec3(0.0, 0.0, 7.0), 1.0)), 1.0, 1e-12);
}

TEST(UnitQuaternion, RejectsDegenerateInput) {
  EXPECT_THROW(UnitQuaternion(0.0, 0.0, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(UnitQuaternion(std::nan(""), 0.0, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(UnitQuaternion(INFINITY, 0.0, 0.0, 0.0), std::invalid_argument);
}

TEST(UnitQuaternion, DoubleCoverComparesEqual) {
  const UnitQuaternion q(0.3, -0.2, 0.9, 0.1);
  const UnitQuaternion neg(-q.w(), -q.x(), -q.y(), -q.z());
  EXPECT_TRUE(q.isApprox(neg));
  EXPECT_NEAR(q.angularDistance(neg), 0.0, 1e-12);
  EXPECT_FALSE(q.isApprox(UnitQuaternion::rotZ(0.1) * q));
}

TEST(UnitQuaternion, ElementaryRotations) {
  EXPECT_TRUE((UnitQuaternion::rotZ(kPi / 2) * Vec3::UnitX()).isApprox(Vec3::UnitY(), 1e-12));
  EXPECT_TRUE((UnitQuaternion::rotX(kPi / 2) * Vec3::UnitY()).isApprox(Vec3::UnitZ(), 1e-12));
  EXPECT_TRUE((UnitQuaternion::rotY(kPi / 2) * Vec3::UnitZ()).isApprox(Vec3::UnitX(), 1e-12));
}

TEST(UnitQuaternion, RollPitchYawComposition) {
  const double r = 0.3, p = -0.4, y = 1.2;
  const UnitQuaternion q = UnitQuaternion::fromRollPitchYaw(r, p, y);
  const Mat3 expected = (Eigen::AngleAxisd(y, Vec3::UnitZ()) * Eigen::AngleAxisd(p, Vec3::UnitY()) *
                         Eigen::AngleAxisd(r, Vec3::UnitX()))
                            .toRotationMatrix();
  EXPECT_TRUE(q.matrix().isApprox(expected, 1e-12));
}

TEST(UnitQuaternion, TiltHeadingTwistIsHeading) {
  const UnitQuaternion q = UnitQuaternion::fromTiltHeading(0.5, 1.0, 2.0);
  EXPECT_NEAR(twistAngle(q, Vec3::UnitZ()), 2.0, 1e-12);
  EXPECT_NEAR(twistAngle(UnitQuaternion::rotZ(-0.7), Vec3::UnitZ()), -0.7, 1e-12);
  EXPECT_NEAR(twistAngle(UnitQuaternion::rotX(0.7), Vec3::UnitZ()), 0.0, 1e-12);
}

TEST(UnitQuaternion, RotationMatrixRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion q = randomRotation(rng);
    EXPECT_TRUE(UnitQuaternion::fromRotationMatrix(q.matrix()).isApprox(q, 1e-12));
  }
}

TEST(UnitQuaternion, LogAngleInRange) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion q = randomRotation(rng);
    const Vec3 phi = q.log();
    EXPECT_LE(phi.norm(), kPi + 1e-12);
    EXPECT_TRUE(UnitQuaternion::exp(phi).isApprox(q, 1e-10));
  }
}

TEST(Compose, IdentityIsNeutral) {
  const RigidTransform T(UnitQuaternion(0.2, 0.4, -0.1, 0.8), Vec3(1.0, -2.0, 3.0));
  EXPECT_TRUE(compose(RigidTransform::identity(), T).isApprox(T));
  EXPECT_TRUE(compose(T, RigidTransform::identity()).isApprox(T));
}

TEST(Compose, InverseCancels) {
  const RigidTransform T(UnitQuaternion(0.2, 0.4, -0.1, 0.8), Vec3(1.0, -2.0, 3.0));
  EXPECT_TRUE(compose(T, T.inverse()).isApprox(RigidTransform::identity(), 1e-12));
  EXPECT_TRUE(compose(T.inverse(), T).isApprox(RigidTransform::identity(), 1e-12));
}

TEST(Compose, QuarterTurnsAddUp) {
  const RigidTransform rz(UnitQuaternion::rotZ(kPi / 2), Vec3::Zero());
  const Vec3 p = compose(rz, rz).apply(Vec3::UnitX());
  EXPECT_NEAR(p.x(), -1.0, 1e-12);
  EXPECT_NEAR(p.y(), 0.0, 1e-12);
  EXPECT_NEAR(p.z(), 0.0, 1e-12);
}

TEST(Compose, MatchesSequentialApplication) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform a(randomRotation(rng), randomVector(rng, 5.0));
    const RigidTransform b(randomRotation(rng), randomVector(rng, 5.0));
    const Vec3 p = randomVector(rng, 3.0);
    EXPECT_TRUE(compose(a, b).apply(p).isApprox(a.apply(b.apply(p)), 1e-12));
    EXPECT_TRUE((a * b).isApprox(compose(a, b)));
  }
}

TEST(Boxminus, SelfIsZero) {
  const UnitQuaternion q(0.1, 0.7, -0.3, 0.2);
  EXPECT_LT(boxminus(q, q).norm(), 1e-15);
}

TEST(Boxminus, SmallYaw) {
  const Vec3 d = boxminus(UnitQuaternion::rotZ(0.1), UnitQuaternion::identity());
  EXPECT_NEAR(d.x(), 0.0, 1e-15);
  EXPECT_NEAR(d.y(), 0.0, 1e-15);
  EXPECT_NEAR(d.z(), 0.1, 1e-15);
}

TEST(Boxminus, RoundTripRandomPairs) {
  std::mt19937_64 rng(42);
  double worst_plus = 0.0;
  double worst_minus = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion a = randomRotation(rng);
    const UnitQuaternion b = randomRotation(rng);
    worst_plus = std::max(worst_plus, boxplus(b, boxminus(a, b)).angularDistance(a));
    const Vec3 d = randomVector(rng, 1.5);
    worst_minus = std::max(worst_minus, (boxminus(boxplus(a, d), a) - d).norm());
  }
  EXPECT_LT(worst_plus, 1e-9);
  EXPECT_LT(worst_minus, 1e-9);
}

TEST(Boxplus, ZeroDeltaIsIdentity) {
  const UnitQuaternion q(0.5, 0.5, -0.5, 0.5);
  EXPECT_TRUE(boxplus(q, Vec3::Zero()).isApprox(q, 1e-15));
}

TEST(Boxplus, QuarterTurnAboutZ) {
  EXPECT_TRUE(boxplus(UnitQuaternion::identity(), Vec3(0.0, 0.0, kPi / 2))
                  .isApprox(UnitQuaternion::rotZ(kPi / 2), 1e-12));
}

TEST(Boxplus, PerturbsOnTheRight) {
  const UnitQuaternion q = UnitQuaternion::rotX(0.4);
  const Vec3 d(0.0, 0.0, 0.3);
  EXPECT_TRUE(boxplus(q, d).isApprox(q * UnitQuaternion::rotZ(0.3), 1e-12));
}

TEST(Boxplus, PreservesNorm) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion q = boxplus(randomRotation(rng), randomVector(rng, 10.0));
    EXPECT_NEAR(norm(q), 1.0, 1e-12);
  }
}

TEST(Slerp, Endpoints) {
  const UnitQuaternion a = UnitQuaternion::rotZ(0.2);
  const UnitQuaternion b = UnitQuaternion::rotZ(1.0);
  EXPECT_TRUE(slerp(a, b, 0.0).isApprox(a, 1e-12));
  EXPECT_TRUE(slerp(a, b, 1.0).isApprox(b, 1e-12));
  EXPECT_TRUE(slerp(a, b, 0.5).isApprox(UnitQuaternion::rotZ(0.6), 1e-12));
}

TEST(RightJacobian, InverseAndFirstOrderExpansion) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 50; ++i) {
    const Vec3 phi = randomVector(rng, 1.0);
    EXPECT_TRUE((rightJacobian(phi) * rightJacobianInverse(phi)).isApprox(Mat3::Identity(), 1e-10));
    const Vec3 d = randomVector(rng, 1e-6);
    const UnitQuaternion lhs = UnitQuaternion::exp(phi + d);
    const UnitQuaternion rhs = UnitQuaternion::exp(phi) * UnitQuaternion::exp(rightJacobian(phi) * d);
    EXPECT_LT(lhs.angularDistance(rhs), 1e-11);
  }
}

TEST(Skew, MatchesCrossProduct) {
  const Vec3 a(1.0, -2.0, 0.5);
  const Vec3 b(0.3, 0.7, -1.1);
  EXPECT_TRUE((skew(a) * b).isApprox(a.cross(b), 1e-15));
}

}  // namespace
}  // namespace mfuse
