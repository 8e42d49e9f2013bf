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

#ifndef MFUSE_ESTIMATOR_HPP_
#define MFUSE_ESTIMATOR_HPP_

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfuse/consensus.hpp"
#include "mfuse/geometry.hpp"
#include "mfuse/nav_state.hpp"
#include "mfuse/signals.hpp"
#include "mfuse/solver.hpp"

namespace mfuse {

inline const Vec3 kGravity{0.0, 0.0, -9.81};

class EmptyBuffer : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransformUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One IMU reading applied over [stamp, stamp + dt).
struct ImuInterval {
  Vec3 accel = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
  double dt = 0.0;
};

/// Per-sample white noise (std per reading) and continuous bias random walk.
struct ImuNoise {
  double accel_sigma = 0.02;      // m/s^2
  double gyro_sigma = 0.001;      // rad/s
  double accel_bias_rw = 1e-4;    // m/s^2/sqrt(s)
  double gyro_bias_rw = 1e-5;     // rad/s/sqrt(s)
};

/// Forward-Euler integration of bias-corrected readings between two states,
/// together with the exact derivatives of the recursion with respect to the
/// biases.
struct ImuPreintegration {
  double dt = 0.0;
  double sample_dt = 0.0;  // mean reading spacing
  UnitQuaternion dq;
  Vec3 dv = Vec3::Zero();
  Vec3 dp = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  Mat3 dR_dbg = Mat3::Zero();
  Mat3 dv_dba = Mat3::Zero();
  Mat3 dv_dbg = Mat3::Zero();
  Mat3 dp_dba = Mat3::Zero();
  Mat3 dp_dbg = Mat3::Zero();

  /// Throws EmptyBuffer without readings.
  static ImuPreintegration integrate(std::span<const ImuInterval> readings, const Vec3& b_a,
                                     const Vec3& b_g);
  /// State at the end of the interval when starting from `start`.
  NavState predict(const NavState& start, const Vec3& gravity = kGravity) const;
};

/// Unweighted 15-vector [r_theta, r_v, r_p, r_ba, r_bg]. The readings are
/// re-integrated at the biases of state i.
Eigen::Matrix<double, 15, 1> imuResidual(const NavState& xi, const NavState& xj,
                                         std::span<const ImuInterval> readings,
                                         const Vec3& gravity = kGravity);

/// Constraint between two keyframes from the readings between them.
class ImuFactor : public Factor {
 public:
  /// Blocks: q_i, p_i, v_i, ba_i, bg_i, q_j, p_j, v_j, ba_j, bg_j.
  ImuFactor(std::vector<BlockId> blocks, std::vector<ImuInterval> readings, const ImuNoise& noise,
            const Vec3& gravity = kGravity);
  int residualDim() const override { return 15; }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;
  const Eigen::Matrix<double, 15, 1>& sqrtWeights() const { return sqrt_w_; }

 private:
  std::vector<ImuInterval> readings_;
  Vec3 gravity_;
  Eigen::Matrix<double, 15, 1> sqrt_w_;
};

/// Relative IMU-frame pose implied by two mount-pose measurements:
/// T_Is * T_Aa(i)^-1 * T_Aa(j) * T_Is^-1.
RigidTransform relativeImuPose(const RigidTransform& T_Aa_i, const RigidTransform& T_Aa_j,
                               const RigidTransform& T_Is);

/// Stacked [sqrt(w_o) e_p ; sqrt(w_q / 2) e_q] with
///   e_p = p_LJ - p_LI - q_LI * dp,  e_q = q_LJ boxminus (q_LI * dq).
Eigen::Matrix<double, 6, 1> poseBetweenResidual(const NavState& xi, const NavState& xj,
                                                const RigidTransform& T_IJ, double w_o,
                                                double w_q);

class PoseBetweenFactor : public Factor {
 public:
  /// Blocks: q_i, p_i, q_j, p_j.
  PoseBetweenFactor(std::vector<BlockId> blocks, const RigidTransform& T_IJ, double w_o, double w_q);
  int residualDim() const override { return 6; }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  RigidTransform T_IJ_;
  double sqrt_wo_;
  double sqrt_wq_;
};

/// sqrt(w_p) * ((p_LJ + q_LJ r) - (p_LI + q_LI r) - q_AL^-1 dp_A) for a
/// position sensor with lever arm r = p_Is.
Vec3 positionBetweenResidual(const NavState& xi, const NavState& xj, const Vec3& dp_A,
                             const Vec3& lever, const UnitQuaternion& q_AL, double w_p);

class PositionBetweenFactor : public Factor {
 public:
  /// Blocks: q_i, p_i, q_j, p_j.
  PositionBetweenFactor(std::vector<BlockId> blocks, const Vec3& dp_A, const Vec3& lever,
                        const UnitQuaternion& q_AL, double w_p);
  int residualDim() const override { return 3; }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Vec3 dp_L_;
  Vec3 lever_;
  double sqrt_w_;
};

/// sqrt(w_t) * (p_bar - (p_AL + q_AL * p_L)).
Vec3 transformResidual(const UnitQuaternion& q_AL, const Vec3& p_AL, const Vec3& p_bar,
                       const Vec3& p_L, double w_t);

class TransformFactor : public Factor {
 public:
  /// Blocks: q_AL, p_AL.
  TransformFactor(std::vector<BlockId> blocks, const Vec3& p_bar, const Vec3& p_L, double w_t);
  int residualDim() const override { return 3; }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Vec3 p_bar_;
  Vec3 p_L_;
  double sqrt_w_;
};

/// Orientation term available for pose sensors:
/// sqrt(w_r) * Log(q_bar^-1 * q_AL * q_Ls), with q_Ls the mount orientation in L.
class TransformRotationFactor : public Factor {
 public:
  /// Blocks: q_AL.
  TransformRotationFactor(BlockId block, const UnitQuaternion& q_bar, const UnitQuaternion& q_Ls,
                          double w_r);
  int residualDim() const override { return 3; }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  UnitQuaternion q_bar_inv_;
  UnitQuaternion q_Ls_;
  double sqrt_w_;
};

/// Measurement noise of one sensor stream.
struct SensorNoise {
  double position_sigma = 1e-3;  // m
  double rotation_sigma = 1e-3;  // rad, pose sensors only
};

struct LocalGraphConfig {
  double lag = 0.5;              // s
  double optimize_rate = 30.0;   // Hz
  double keyframe_gap = 0.1;     // s, longest IMU-only stretch between states
  double imu_rate = 200.0;       // Hz
  ImuNoise imu_noise;
  Vec3 gravity = kGravity;
  LmOptions lm;
  // Initial-state prior standard deviations.
  double prior_rotation_sigma = 1e-4;
  double prior_position_sigma = 1e-4;
  double prior_velocity_sigma = 1e-3;
  double prior_accel_bias_sigma = 0.05;
  double prior_gyro_bias_sigma = 0.005;
};

/// The high-rate local graph. States are created at the IMU stamps of fused
/// measurements and whenever keyframe_gap elapses; the published output is
/// propagated from the newest state with the buffered IMU readings.
class LocalGraph {
 public:
  LocalGraph(const LocalGraphConfig& cfg, const NavState& initial);

  /// Readings must arrive in stamp order; each applies until the next one.
  void addImu(double stamp, const ImuReading& reading);

  /// Pose measurement of mount frame s in the sensor frame A.
  bool addPose(const std::string& sensor, double stamp, const RigidTransform& T_Aa,
               const RigidTransform& T_Is, const SensorNoise& noise);
  /// Position measurement of mount point s in the sensor frame A. q_AL is the
  /// current transform estimate of that sensor.
  bool addPosition(const std::string& sensor, double stamp, const Vec3& p_A,
                   const RigidTransform& T_Is, const UnitQuaternion& q_AL,
                   const SensorNoise& noise);

  /// Solves the window and marginalizes states beyond the lag.
  OptimizeResult optimize();

  /// Output at the newest IMU stamp.
  LocalSample publish() const;
  std::size_t stateCount() const { return graph_.states().size(); }
  const Graph& graph() const { return graph_; }
  NavState keyframe(double stamp) const;
  std::vector<double> keyframeStamps() const;

 private:
  struct Keyframe {
    std::size_t index;
    double stamp;
  };
  struct LastMeasurement {
    double stamp;
    RigidTransform pose;
  };

  std::optional<Keyframe> keyframeAt(double stamp);
  Keyframe createKeyframe(double stamp);
  NavState stateOf(const Keyframe& kf) const;
  std::vector<BlockId> blockIds(std::size_t index) const;
  std::vector<ImuInterval> readingsBetween(double t0, double t1) const;

  LocalGraphConfig cfg_;
  Graph graph_;
  std::map<double, Keyframe> keyframes_;
  std::size_t next_index_ = 0;
  std::vector<std::pair<double, ImuReading>> imu_;
  std::map<std::string, LastMeasurement> last_;
};

/// Sensor-frame alignment state T_AL of one sensor.
struct SensorTransformState {
  double stamp = 0.0;
  UnitQuaternion q_AL;
  Vec3 p_AL = Vec3::Zero();
  bool frozen = false;
  /// Rotation fully constrained by the data in the window.
  bool observable = false;
  /// At least one observable solve has converged.
  bool available = false;

  RigidTransform transform() const { return {q_AL, p_AL}; }
};

struct TransformGraphConfig {
  double window = 20.0;  // s
  double rate = 10.0;    // Hz
  /// Spread (m) below which a principal direction counts as unexcited.
  double observability_spread = 0.03;
  LmOptions lm;
};

/// Windowed estimate of a sensor's reference frame relative to the local
/// frame, constrained by sensor positions against local mount positions.
class TransformGraph {
 public:
  TransformGraph(std::string sensor_id, Modality modality, const SensorNoise& noise,
                 const TransformGraphConfig& cfg = {});

  const std::string& sensorId() const { return sensor_id_; }
  /// p_bar, optionally with orientation q_bar (pose sensors), measured in A;
  /// mount pose in L from the local estimate.
  void addMeasurement(double stamp, const Vec3& p_bar, const std::optional<UnitQuaternion>& q_bar,
                      const RigidTransform& T_Ls);
  /// Drops measurements older than the window and re-solves unless frozen.
  void update(double now);
  void setFrozen(bool frozen) { state_.frozen = frozen; }
  const SensorTransformState& state() const { return state_; }
  std::size_t measurementCount() const { return measurements_.size(); }

 private:
  struct Measurement {
    double stamp;
    Vec3 p_bar;
    std::optional<UnitQuaternion> q_bar;
    RigidTransform T_Ls;
  };

  std::string sensor_id_;
  Modality modality_;
  SensorNoise noise_;
  TransformGraphConfig cfg_;
  SensorTransformState state_;
  bool initialized_ = false;
  /// Twist of q_AL about an unexcited line direction, kept while that
  /// direction carries no information.
  UnitQuaternion held_rotation_;
  std::vector<Measurement> measurements_;
};

/// Offline drive of a transform graph at cfg.rate against a local series.
std::vector<SensorTransformState> runTransformGraph(const SensorStream& stream,
                                                    const SensorNoise& noise,
                                                    const LocalSeries& local,
                                                    const TransformGraphConfig& cfg = {});

/// One fused input for runLocalGraph.
struct FusedInput {
  const SensorStream* stream = nullptr;
  SensorNoise noise;
  /// Frame rotation for position sensors.
  UnitQuaternion q_AL;
};

/// Offline drive of the local graph: IMU stream plus the measurements of the
/// sensor selected by each decision (decisions sorted by stamp; the latest
/// decision at or before a measurement applies). Output per IMU sample.
LocalSeries runLocalGraph(const SensorStream& imu, const std::vector<FusedInput>& inputs,
                          const std::vector<FusionDecision>& decisions, const NavState& initial,
                          const LocalGraphConfig& cfg = {});

void writeFusedHeader(std::ostream& out);
void writeFusedRow(std::ostream& out, const LocalSample& s, const std::optional<std::string>& selected);

}  // namespace mfuse

#endif  // MFUSE_ESTIMATOR_HPP_
