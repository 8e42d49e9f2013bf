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

#ifndef MFUSE_SIGNALS_HPP_
#define MFUSE_SIGNALS_HPP_

#include <array>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mfuse/geometry.hpp"

namespace mfuse {

enum class Modality { Pose, Position, Imu };

std::string_view toString(Modality modality);
/// Throws std::invalid_argument for unknown names.
Modality modalityFromString(std::string_view name);

struct ImuReading {
  Vec3 accel = Vec3::Zero();  // specific force, m/s^2
  Vec3 gyro = Vec3::Zero();   // rad/s
};

using Payload = std::variant<RigidTransform, Vec3, ImuReading>;

struct TimedSample {
  double stamp = 0.0;
  Payload payload;
};

class TooFewSamples : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Time-ordered measurements of one sensor. `extrinsic` is the pose of the
/// sensor mount point in the IMU (body) frame, T_Is.
class SensorStream {
 public:
  SensorStream() = default;
  SensorStream(std::string id, Modality modality, double rate,
               RigidTransform extrinsic = RigidTransform::identity());

  const std::string& id() const { return id_; }
  Modality modality() const { return modality_; }
  double rate() const { return rate_; }
  const RigidTransform& extrinsic() const { return extrinsic_; }
  const std::vector<TimedSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const TimedSample& operator[](std::size_t i) const { return samples_[i]; }

  /// Throws std::invalid_argument if the stamp does not strictly increase
  /// or the payload does not match the modality.
  void append(TimedSample sample);
  void reserve(std::size_t n) { samples_.reserve(n); }

  /// Same metadata, different samples (validated like append).
  SensorStream withSamples(std::vector<TimedSample> samples) const;

  /// Translation part of a pose or position sample.
  Vec3 position(std::size_t i) const;
  const RigidTransform& pose(std::size_t i) const;
  const ImuReading& imu(std::size_t i) const;

  /// Half-open index range [first, last) of samples with stamp in [t0, t1].
  std::pair<std::size_t, std::size_t> indexRange(double t0, double t1) const;

 private:
  std::string id_;
  Modality modality_ = Modality::Pose;
  double rate_ = 0.0;
  RigidTransform extrinsic_;
  std::vector<TimedSample> samples_;
};

struct StampedVec3 {
  double stamp = 0.0;
  Vec3 value = Vec3::Zero();
};

using VectorSeries = std::vector<StampedVec3>;

/// Central differences on interior points, second-order one-sided at the
/// ends (first-order for two-sample segments). Samples separated by more
/// than `max_gap` seconds are differentiated as separate segments; an
/// isolated sample has no defined velocity and is dropped.
/// Throws TooFewSamples with fewer than two samples.
VectorSeries differentiate(std::span<const StampedVec3> positions,
                           double max_gap = std::numeric_limits<double>::infinity());

/// Velocity of the stream's position channel (pose or position modality).
VectorSeries differentiatePositions(const SensorStream& stream);

/// Linear interpolation inside the series span; nullopt outside it or when
/// the bracketing samples are more than `max_gap` apart.
std::optional<Vec3> interpolate(const VectorSeries& series, double stamp,
                                double max_gap = std::numeric_limits<double>::infinity());

/// Two velocity sources sampled on common stamps over one window.
struct VelocityWindow {
  std::vector<double> stamps;
  std::array<std::vector<double>, 3> a;
  std::array<std::vector<double>, 3> b;
  double duration = 0.0;

  std::size_t size() const { return stamps.size(); }
};

/// Takes series A's samples inside [t_end - duration, t_end] and resamples
/// B onto them. Returns nullopt (insufficient overlap, reported upstream as
/// a dropout) when fewer than two stamps, or fewer than half of A's window
/// stamps, can be bracketed by B samples at most `max_gap` apart.
std::optional<VelocityWindow> extractWindow(
    const VectorSeries& a, const VectorSeries& b, double t_end, double duration,
    double max_gap = std::numeric_limits<double>::infinity());

/// Joint per-axis centering and scaling: both sources of an axis are shifted
/// by the axis' joint mean and divided by max(half_range, scale_floor), where
/// half_range = max(|max|, |min|) after centering. Axes whose divisor is
/// below 1e-9 stay centered but unscaled.
VelocityWindow standardize(const VelocityWindow& window, double scale_floor = 0.0);

/// Stream CSV: one '#' metadata line per sensor
///   # sensor,<id>,<modality>,<rate>,tx,ty,tz,qw,qx,qy,qz
/// then the header `stamp,sensor_id,modality,p0,p1,p2,p3,p4,p5,p6` and one
/// row per sample. Payload columns: pose = px,py,pz,qw,qx,qy,qz;
/// position = px,py,pz; imu = ax,ay,az,gx,gy,gz. Unused columns are empty.
void writeStreamsCsv(std::ostream& out, std::span<const SensorStream> streams);
/// Throws std::invalid_argument on malformed input.
std::vector<SensorStream> readStreamsCsv(std::istream& in);

}  // namespace mfuse

#endif  // MFUSE_SIGNALS_HPP_
