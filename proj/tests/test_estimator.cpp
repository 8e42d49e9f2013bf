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
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "mfuse/estimator.hpp"
#include "mfuse/sim.hpp"
#include "test_support.hpp"

namespace mfuse {
namespace {

std::vector<ImuInterval> constantReadings(const Vec3& accel, const Vec3& gyro, double rate,
                                          double duration) {
  const int n = static_cast<int>(std::lround(rate * duration));
  return std::vector<ImuInterval>(n, ImuInterval{accel, gyro, 1.0 / rate});
}

double twistZ(const UnitQuaternion& q) { return 2.0 * std::atan2(q.z(), q.w()); }

TEST(Preintegration, ZeroInputIsIdentity) {
  const auto pre = ImuPreintegration::integrate(
      constantReadings(Vec3::Zero(), Vec3::Zero(), 200.0, 1.0), Vec3::Zero(), Vec3::Zero());
  EXPECT_NEAR(pre.dt, 1.0, 1e-12);
  EXPECT_LT(pre.dq.log().norm(), 1e-15);
  EXPECT_LT(pre.dv.norm(), 1e-15);
  EXPECT_LT(pre.dp.norm(), 1e-15);
}

TEST(Preintegration, ConstantAcceleration) {
  const auto pre = ImuPreintegration::integrate(
      constantReadings(Vec3::UnitX(), Vec3::Zero(), 200.0, 1.0), Vec3::Zero(), Vec3::Zero());
  EXPECT_LT((pre.dv - Vec3(1.0, 0.0, 0.0)).norm(), 1e-9);
  EXPECT_LT((pre.dp - Vec3(0.5, 0.0, 0.0)).norm(), 1e-9);
}

TEST(Preintegration, ConstantYawRate) {
  const auto pre = ImuPreintegration::integrate(
      constantReadings(Vec3::Zero(), Vec3::UnitZ(), 200.0, 1.0), Vec3::Zero(), Vec3::Zero());
  EXPECT_LT(boxminus(pre.dq, UnitQuaternion::rotZ(1.0)).norm(), 1e-6);
}

TEST(Preintegration, BiasIsSubtracted) {
  const Vec3 b_a(0.1, -0.2, 0.3);
  const Vec3 b_g(0.01, 0.02, -0.03);
  const auto pre = ImuPreintegration::integrate(constantReadings(b_a, b_g, 200.0, 0.5), b_a, b_g);
  EXPECT_LT(pre.dq.log().norm(), 1e-15);
  EXPECT_LT(pre.dv.norm(), 1e-15);
}

TEST(Preintegration, EmptyBufferThrows) {
  EXPECT_THROW(ImuPreintegration::integrate({}, Vec3::Zero(), Vec3::Zero()), EmptyBuffer);
}

TEST(Preintegration, HoverKeepsStatePut) {
  // At rest the IMU measures +g upward; prediction must stay in place.
  const auto readings = constantReadings(-kGravity, Vec3::Zero(), 200.0, 0.5);
  NavState x0;
  x0.p_LI = Vec3(1.0, 2.0, 3.0);
  const NavState x1 =
      ImuPreintegration::integrate(readings, Vec3::Zero(), Vec3::Zero()).predict(x0);
  EXPECT_LT((x1.p_LI - x0.p_LI).norm(), 1e-12);
  EXPECT_LT(x1.v_I.norm(), 1e-12);
  EXPECT_NEAR(x1.stamp, 0.5, 1e-12);
}

class ImuResidualTest : public ::testing::Test {
 protected:
  ImuResidualTest() : readings_(constantReadings(Vec3(0.3, -0.1, 9.9), Vec3(0.1, 0.2, 0.5), 200.0, 0.25)) {
    xi_.v_I = Vec3(0.2, 0.1, 0.0);
    xj_ = ImuPreintegration::integrate(readings_, Vec3::Zero(), Vec3::Zero()).predict(xi_);
  }
  std::vector<ImuInterval> readings_;
  NavState xi_;
  NavState xj_;
};

TEST_F(ImuResidualTest, ConsistentStatesGiveZero) {
  EXPECT_LT(imuResidual(xi_, xj_, readings_).norm(), 1e-12);
}

TEST_F(ImuResidualTest, PositionPerturbationAppearsInPositionBlock) {
  NavState xj = xj_;
  xj.p_LI += Vec3(0.1, 0.0, 0.0);
  const auto r = imuResidual(xi_, xj, readings_);
  EXPECT_LT((r.segment<3>(6) - Vec3(0.1, 0.0, 0.0)).norm(), 1e-12);
  EXPECT_LT(r.head<6>().norm(), 1e-12);
  EXPECT_LT(r.tail<6>().norm(), 1e-12);

  // The factor applies the position weight to the same block.
  std::vector<VariableBlock> blocks;
  for (const NavState* x : {&xi_, &xj}) {
    blocks.push_back(VariableBlock::makeRotation(x->q_LI));
    blocks.push_back(VariableBlock::makeVector(x->p_LI));
    blocks.push_back(VariableBlock::makeVector(x->v_I));
    blocks.push_back(VariableBlock::makeVector(x->b_a));
    blocks.push_back(VariableBlock::makeVector(x->b_g));
  }
  std::vector<const VariableBlock*> values;
  for (const auto& b : blocks) values.push_back(&b);
  const ImuFactor f({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, readings_, ImuNoise{});
  Eigen::VectorXd weighted;
  f.evaluate(values, weighted, nullptr);
  EXPECT_NEAR(weighted[6], f.sqrtWeights()[6] * 0.1, 1e-9 * f.sqrtWeights()[6]);
}

TEST(PoseBetweenResidual, ExactMeasurementIsZero) {
  NavState xi;
  xi.q_LI = UnitQuaternion::fromRollPitchYaw(0.1, 0.2, 0.3);
  xi.p_LI = Vec3(1.0, 2.0, 3.0);
  NavState xj;
  xj.q_LI = UnitQuaternion::fromRollPitchYaw(-0.2, 0.1, 1.0);
  xj.p_LI = Vec3(0.5, -1.0, 2.0);
  EXPECT_LT(poseBetweenResidual(xi, xj, xi.pose().inverse() * xj.pose(), 4.0, 2.0).norm(), 1e-12);
}

TEST(PoseBetweenResidual, YawErrorWeighting) {
  NavState xi;
  NavState xj;
  xj.q_LI = UnitQuaternion::rotZ(0.1);
  const auto r = poseBetweenResidual(xi, xj, RigidTransform(), 1.0, 2.0);
  EXPECT_NEAR(r.tail<3>().squaredNorm(), (2.0 / 2.0) * 0.1 * 0.1, 1e-12);
  EXPECT_LT(r.head<3>().norm(), 1e-15);
}

TEST(PoseBetweenResidual, LeftInvariant) {
  NavState xi;
  xi.q_LI = UnitQuaternion::fromRollPitchYaw(0.1, 0.2, 0.3);
  NavState xj;
  xj.q_LI = UnitQuaternion::fromRollPitchYaw(0.3, -0.1, 0.6);
  xj.p_LI = Vec3(0.4, 0.2, -0.1);
  const RigidTransform meas(UnitQuaternion::rotY(0.2), Vec3(0.3, 0.1, 0.0));
  const RigidTransform G(UnitQuaternion::fromRollPitchYaw(1.0, -0.5, 2.0), Vec3(5.0, -3.0, 1.0));
  NavState gi = xi;
  NavState gj = xj;
  gi.q_LI = (G * xi.pose()).rotation;
  gi.p_LI = (G * xi.pose()).translation;
  gj.q_LI = (G * xj.pose()).rotation;
  gj.p_LI = (G * xj.pose()).translation;
  // The position block is expressed in L and rotates with G; its length does not.
  const auto a = poseBetweenResidual(xi, xj, meas, 3.0, 5.0);
  const auto b = poseBetweenResidual(gi, gj, meas, 3.0, 5.0);
  EXPECT_NEAR(a.head<3>().norm(), b.head<3>().norm(), 1e-12);
  EXPECT_LT((a.tail<3>() - b.tail<3>()).norm(), 1e-12);
  EXPECT_LT((G.rotation * a.head<3>() - b.head<3>()).norm(), 1e-12);
}

TEST(RelativeImuPose, RecoversBodyMotionThroughExtrinsic) {
  const RigidTransform T_Is(UnitQuaternion::rotX(0.4), Vec3(0.05, 0.0, 0.02));
  const RigidTransform frame(UnitQuaternion::rotZ(1.0), Vec3(3.0, 1.0, 0.0));
  const RigidTransform Ti(UnitQuaternion::rotZ(0.2), Vec3(1.0, 0.0, 0.0));
  const RigidTransform Tj(UnitQuaternion::rotY(0.3), Vec3(1.2, 0.4, 0.1));
  const RigidTransform Ai = frame * Ti * T_Is;
  const RigidTransform Aj = frame * Tj * T_Is;
  EXPECT_TRUE(relativeImuPose(Ai, Aj, T_Is).isApprox(Ti.inverse() * Tj, 1e-12));
}

TEST(PositionBetweenResidual, RotatedDisplacement) {
  NavState xi;
  NavState xj;
  xj.p_LI = Vec3(0.0, -1.0, 0.0);
  EXPECT_LT(positionBetweenResidual(xi, xj, Vec3::UnitX(), Vec3::Zero(),
                                    UnitQuaternion::rotZ(std::numbers::pi / 2), 1.0)
                .norm(),
            1e-12);
}

TEST(PositionBetweenResidual, LeverArmConsistency) {
  NavState xi;
  xi.q_LI = UnitQuaternion::rotZ(0.3);
  xi.p_LI = Vec3(1.0, 0.0, 0.5);
  NavState xj;
  xj.q_LI = UnitQuaternion::fromRollPitchYaw(0.1, 0.0, 1.2);
  xj.p_LI = Vec3(1.5, 0.7, 0.4);
  const Vec3 lever(0.1, -0.05, 0.2);
  const UnitQuaternion q_AL = UnitQuaternion::fromRollPitchYaw(0.05, -0.02, 2.0);
  const Vec3 dp_A = q_AL * ((xj.p_LI + xj.q_LI * lever) - (xi.p_LI + xi.q_LI * lever));
  EXPECT_LT(positionBetweenResidual(xi, xj, dp_A, lever, q_AL, 7.0).norm(), 1e-12);
  // Zero lever arm reduces to the plain displacement difference.
  const Vec3 r = positionBetweenResidual(xi, xj, Vec3::Zero(), Vec3::Zero(), q_AL, 1.0);
  EXPECT_LT((r - (xj.p_LI - xi.p_LI)).norm(), 1e-12);
}

TEST(TransformResidual, Examples) {
  EXPECT_LT(transformResidual(UnitQuaternion(), Vec3::Zero(), Vec3(1, 2, 3), Vec3(1, 2, 3), 1.0).norm(),
            1e-15);
  EXPECT_LT(transformResidual(UnitQuaternion(), Vec3::UnitX(), Vec3::UnitX(), Vec3::Zero(), 1.0).norm(),
            1e-15);
}

TEST(TransformResidual, OnlyTrueTransformFitsNonCollinearPoints) {
  const RigidTransform truth(UnitQuaternion::fromTiltHeading(0.02, -0.01, 2.0), Vec3(1.0, -2.0, 0.3));
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0.2)};
  const auto total = [&](const RigidTransform& T) {
    double s = 0.0;
    for (const Vec3& p : pts) {
      s += transformResidual(T.rotation, T.translation, truth.apply(p), p, 1.0).squaredNorm();
    }
    return s;
  };
  EXPECT_LT(total(truth), 1e-24);
  std::mt19937 rng(2);
  std::normal_distribution<double> n(0.0, 0.1);
  for (int k = 0; k < 50; ++k) {
    const RigidTransform other(boxplus(truth.rotation, Vec3(n(rng), n(rng), n(rng))),
                               truth.translation + Vec3(n(rng), n(rng), n(rng)));
    EXPECT_GT(total(other), 0.0);
  }
}

TEST(FusedCsv, HeaderAndRow) {
  std::ostringstream out;
  writeFusedHeader(out);
  LocalSample s;
  s.state.stamp = 0.5;
  s.state.p_LI = Vec3(1.0, 2.0, 3.0);
  writeFusedRow(out, s, std::nullopt);
  EXPECT_EQ(out.str(),
            "stamp,qw,qx,qy,qz,px,py,pz,vx,vy,vz,selected_sensor\n0.5,1,0,0,0,1,2,3,0,0,0,none\n");
}

// Noiseless IMU from the analytic trajectory.
SensorStream perfectImu(const Trajectory& traj, const Vec3& accel_bias = Vec3::Zero()) {
  ImuSpec spec;
  spec.noise.accel_sigma = 0.0;
  spec.noise.gyro_sigma = 0.0;
  spec.noise.accel_bias_rw = 0.0;
  spec.noise.gyro_bias_rw = 0.0;
  spec.accel_bias = accel_bias;
  return synthesizeImu(traj, spec, 1);
}

double positionRmse(const LocalSeries& est, const Trajectory& traj) {
  double s = 0.0;
  for (const auto& x : est) s += (x.state.p_LI - traj.position(x.state.stamp)).squaredNorm();
  return std::sqrt(s / static_cast<double>(est.size()));
}

TEST(LocalGraphRun, NoiselessPoseSensorTracksTruth) {
  const Trajectory traj(testing::lateralSpec(60.0));
  const SensorStream imu = perfectImu(traj);
  const RigidTransform extrinsic(UnitQuaternion::rotX(0.1), Vec3(0.03, 0.0, 0.05));
  const SensorStream pose = testing::noiselessStream(
      "P", Modality::Pose, 20.0, traj, RigidTransform(UnitQuaternion::rotZ(0.7), Vec3(2, 1, 0)),
      extrinsic);
  FusedInput in;
  in.stream = &pose;
  const LocalSeries est = runLocalGraph(imu, {in}, {}, traj.state(0.0));
  ASSERT_EQ(est.size(), imu.size());
  EXPECT_LT(positionRmse(est, traj), 1e-3);
}

TEST(LocalGraphRun, ImuOnlyCoastingDrifts) {
  const Trajectory traj(testing::lateralSpec(12.0));
  const SensorStream imu = perfectImu(traj, Vec3(0.02, -0.01, 0.0));
  FusionDecision none;
  none.stamp = 0.0;
  const LocalSeries est = runLocalGraph(imu, {}, {none}, traj.state(0.0));
  // Envelope of the error over consecutive 2 s blocks must grow.
  double prev = -1.0;
  for (double t0 = 0.0; t0 < 12.0 - 1e-9; t0 += 2.0) {
    double env = 0.0;
    for (const auto& x : est) {
      if (x.state.stamp >= t0 && x.state.stamp < t0 + 2.0) {
        env = std::max(env, (x.state.p_LI - traj.position(x.state.stamp)).norm());
      }
    }
    EXPECT_GT(env, prev);
    prev = env;
  }
  EXPECT_GT(prev, 0.5);
}

TEST(TransformGraphRun, YawUnobservableUnderVerticalMotion) {
  TrajectorySpec spec;
  spec.duration = 20.0;
  spec.z.offset = 1.0;
  spec.z.sines.push_back({0.2, 0.3, 0.0, 0.0, 1.0});
  const Trajectory traj(spec);
  const RigidTransform frame(UnitQuaternion::rotZ(2.0 * std::numbers::pi / 3), Vec3(1.0, 2.0, 0.0));
  const SensorStream pos =
      testing::noiselessStream("POS", Modality::Position, 20.0, traj, frame, RigidTransform());
  const auto states = runTransformGraph(pos, SensorNoise{}, testing::truthSeries(traj, 200.0));
  ASSERT_FALSE(states.empty());
  for (const auto& s : states) {
    EXPECT_LT(std::abs(twistZ(s.q_AL)), 1e-3) << s.stamp;
    EXPECT_FALSE(s.observable) << s.stamp;
  }
}

TEST(TransformGraphRun, ConvergesAfterLateralMotion) {
  const Trajectory traj(testing::lateralSpec(12.0));
  const RigidTransform frame(UnitQuaternion::fromTiltHeading(0.01, -0.02, 2.0 * std::numbers::pi / 3),
                             Vec3(1.0, 2.0, 0.0));
  const SensorStream pos =
      testing::noiselessStream("POS", Modality::Position, 20.0, traj, frame, RigidTransform());
  const auto states = runTransformGraph(pos, SensorNoise{}, testing::truthSeries(traj, 200.0));
  bool checked = false;
  for (const auto& s : states) {
    if (s.stamp < 5.0) continue;
    checked = true;
    EXPECT_TRUE(s.available);
    EXPECT_LT(boxminus(s.q_AL, frame.rotation).norm(), 2.0 * std::numbers::pi / 180.0) << s.stamp;
    EXPECT_LT((s.p_AL - frame.translation).norm(), 0.05) << s.stamp;
  }
  EXPECT_TRUE(checked);
}

TEST(TransformGraphRun, FrozenStateIsUnchanged) {
  const Trajectory traj(testing::lateralSpec(8.0));
  const RigidTransform frame(UnitQuaternion::rotZ(1.0), Vec3(1.0, 0.0, 0.0));
  const SensorStream pos =
      testing::noiselessStream("POS", Modality::Position, 20.0, traj, frame, RigidTransform());
  const LocalSeries local = testing::truthSeries(traj, 200.0);
  TransformGraph g("POS", Modality::Position, SensorNoise{});
  std::size_t li = 0;
  std::size_t k = 0;
  for (; k < pos.size() && pos[k].stamp < 4.0; ++k) {
    while (li + 1 < local.size() && local[li].state.stamp < pos[k].stamp - 1e-9) ++li;
    g.addMeasurement(pos[k].stamp, pos.position(k), std::nullopt, local[li].state.pose());
    if (k % 2 == 0) g.update(pos[k].stamp);
  }
  g.setFrozen(true);
  const SensorTransformState before = g.state();
  for (; k < pos.size(); ++k) {
    while (li + 1 < local.size() && local[li].state.stamp < pos[k].stamp - 1e-9) ++li;
    g.addMeasurement(pos[k].stamp, pos.position(k), std::nullopt, local[li].state.pose());
    g.update(pos[k].stamp);
  }
  EXPECT_EQ(g.state().q_AL.w(), before.q_AL.w());
  EXPECT_EQ(g.state().q_AL.x(), before.q_AL.x());
  EXPECT_EQ(g.state().q_AL.y(), before.q_AL.y());
  EXPECT_EQ(g.state().q_AL.z(), before.q_AL.z());
  EXPECT_EQ(g.state().p_AL, before.p_AL);
}

}  // namespace
}  // namespace mfuse
