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

#ifndef MFUSE_SIM_HPP_
#define MFUSE_SIM_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mfuse/consensus.hpp"
#include "mfuse/estimator.hpp"
#include "mfuse/geometry.hpp"
#include "mfuse/metrics.hpp"
#include "mfuse/nav_state.hpp"
#include "mfuse/signals.hpp"

namespace mfuse {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// amplitude * S((t - start) / duration) with the quintic smoothstep S.
struct RampTerm {
  double amplitude = 0.0;
  double start = 0.0;
  double duration = 1.0;
};

/// amplitude * S((t - start) / ramp) * sin(2 pi f (t - start) + phase). A
/// zero ramp switches the term on at full amplitude for all t.
struct SineTerm {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;      // rad
  double start = 0.0;
  double ramp = 0.0;
};

struct AxisProfile {
  double offset = 0.0;
  std::vector<RampTerm> ramps;
  std::vector<SineTerm> sines;
};

struct TrajectorySpec {
  double duration = 150.0;
  AxisProfile x, y, z, yaw;
};

/// Analytic C2 trajectory: position from the axis profiles, orientation
/// R = Rz(yaw).
class Trajectory {
 public:
  explicit Trajectory(TrajectorySpec spec);

  double duration() const { return spec_.duration; }
  Vec3 position(double t) const;
  Vec3 velocity(double t) const;
  Vec3 acceleration(double t) const;
  double yaw(double t) const;
  double yawRate(double t) const;
  UnitQuaternion orientation(double t) const;
  /// Body-frame angular velocity.
  Vec3 angularVelocity(double t) const;
  RigidTransform pose(double t) const { return {orientation(t), position(t)}; }
  /// Ground-truth navigation state (body velocity, zero biases).
  NavState state(double t) const;

 private:
  TrajectorySpec spec_;
};

struct ImuSpec {
  double rate = 200.0;
  ImuNoise noise;
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
};

struct SensorSpec {
  std::string id;
  Modality modality = Modality::Pose;
  double rate = 20.0;
  /// First sample time.
  double start = 0.0;
  SensorNoise noise;
  /// Random-walk drift of the reported position (m/sqrt(s)), as accumulated
  /// by odometry. Zero for absolute position sensors.
  double drift_sigma = 0.0;
  /// Mount point in the body frame, T_Is.
  RigidTransform extrinsic;
  /// Sensor reference frame relative to the world, T_SW.
  RigidTransform frame;
};

enum class CorruptionKind { Misalign, Noise, Drift, Dropout };

std::string_view toString(CorruptionKind kind);
CorruptionKind corruptionFromString(std::string_view name);

struct CorruptionEvent {
  std::string sensor;
  CorruptionKind kind = CorruptionKind::Dropout;
  double start = 0.0;
  double end = 0.0;
  // Misalign: tilt-heading angles (rad), applied as Exp([roll, pitch, 0]) Rz(yaw).
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  // Noise: white std (m) and random-walk increment std per sample (m).
  double white_sigma = 0.02;
  double brown_sigma = 0.005;
  // Drift: offset v0 (e^{lambda tau} - 1) / lambda along axis (sensor frame).
  double v0 = 0.01;
  double lambda = 0.05;
  Vec3 axis = Vec3::UnitY();

  UnitQuaternion misalignment() const { return UnitQuaternion::fromTiltHeading(roll, pitch, yaw); }
};

/// Pipeline settings carried by a scenario.
struct PipelineSettings {
  MetricConfig metric;
  ConsensusConfig consensus;
  double decision_rate = 10.0;  // Hz
  LocalGraphConfig local;
  TransformGraphConfig transform;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  TrajectorySpec trajectory;
  ImuSpec imu;
  std::vector<SensorSpec> sensors;
  std::vector<CorruptionEvent> corruptions;
  PipelineSettings pipeline;

  /// Throws ScenarioError on inconsistent content.
  void validate() const;
  const SensorSpec& sensor(std::string_view id) const;
  /// Actual frame of the (possibly misaligned) stream at time t.
  RigidTransform frameAt(std::string_view id, double t) const;
};

Scenario loadScenario(const std::string& path);
Scenario parseScenario(const std::string& json_text);
std::string dumpScenario(const Scenario& scenario);

/// Takeoff, z-only flight until 35 s, then lateral Lissajous motion with yaw.
/// Three sensors (POS, LIO, VIO) with the corruption schedule of the
/// indoor experiment.
Scenario defaultIndoorScenario();

/// Deterministic per-purpose seed derived from the scenario seed.
std::uint64_t deriveSeed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

/// Readings integrate exactly over [t_k, t_k + 1/rate): the gyro holds the
/// mean rate Log(R_k^T R_k+1) / dt and the accelerometer the mean specific
/// force in the frame at t_k.
SensorStream synthesizeImu(const Trajectory& traj, const ImuSpec& spec, std::uint64_t seed);
SensorStream synthesizeSensor(const Trajectory& traj, const SensorSpec& spec, std::uint64_t seed);
SensorStream applyCorruption(const SensorStream& stream, const CorruptionEvent& event,
                             std::uint64_t seed);

struct SimulationOutput {
  LocalSeries truth;  // at IMU stamps
  SensorStream imu;
  std::vector<SensorStream> clean;
  std::vector<SensorStream> corrupted;
};

/// Generates every stream of a scenario; sensors run on up to `threads`
/// workers with identical results for any thread count.
SimulationOutput simulate(const Scenario& scenario, unsigned threads = 1);

}  // namespace mfuse

#endif  // MFUSE_SIM_HPP_
