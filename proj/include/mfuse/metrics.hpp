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

#ifndef MFUSE_METRICS_HPP_
#define MFUSE_METRICS_HPP_

#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "mfuse/geometry.hpp"
#include "mfuse/nav_state.hpp"
#include "mfuse/signals.hpp"

namespace mfuse {

enum class MetricKind { MAE, PCC, KL, CM };

std::string_view toString(MetricKind kind);
MetricKind metricFromString(std::string_view name);

struct MetricConfig {
  double window = 1.0;  // s
  MetricKind metric = MetricKind::CM;
  /// KDE bandwidth in standardized units; Silverman's rule per sample if unset.
  std::optional<double> kde_bandwidth;
  int kde_grid_points = 256;
  /// Lower bound on the standardization divisor (m/s). Windows whose
  /// half-range is below it are centered but keep physical units.
  double scale_floor = 1.0;
  /// Largest sample spacing bridged by differentiation and resampling.
  double max_gap = 0.25;

  /// Throws std::invalid_argument when the invariants are violated.
  void validate() const;
};

class DegenerateVariance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Velocity at mount a, expressed in a, as measured by sensor b:
///   q_Aa^-1 * q_AB * q_Bb * (v_b + omega_b x r_ba).
Vec3 transportVelocity(const Vec3& v_b, const Vec3& omega_b, const Vec3& r_ba,
                       const UnitQuaternion& q_Aa, const UnitQuaternion& q_AB,
                       const UnitQuaternion& q_Bb);

/// Mean absolute error per axis, summed over the three axes.
double mae(const VelocityWindow& window);
/// Sample Pearson correlation per axis. Throws DegenerateVariance if any
/// axis sequence is constant.
Vec3 pcc(const VelocityWindow& window);
/// Discrete KL(P || Q) of Gaussian KDEs on a shared grid.
double klDivergence(std::span<const double> p, std::span<const double> q,
                    const MetricConfig& cfg);
/// (2 * integral (F_P - F_Q)^2 dx)^(1/2), exact for empirical CDFs.
double cramerDistance(std::span<const double> p, std::span<const double> q);

/// Silverman's rule 1.06 * sigma * n^(-1/5); small positive floor for
/// constant samples.
double silvermanBandwidth(std::span<const double> samples);

/// Per-axis distance of the configured metric, summed over axes. PCC is
/// turned into a distance 1 - rho; an axis where exactly one sequence is
/// constant scores 1, both constant scores 0.
double windowDistance(const VelocityWindow& window, MetricKind kind, const MetricConfig& cfg);

/// Consistency result; nullopt is the dropout marker.
using ConsistencyValue = std::optional<double>;
inline constexpr double kDropoutMarker = -0.01;
inline double reportedValue(const ConsistencyValue& v) { return v ? *v : kDropoutMarker; }

/// A sensor stream plus the current estimate of its reference-frame
/// rotation relative to the local frame (q_SL, maps L vectors into S).
struct SensorTrack {
  const SensorStream* stream = nullptr;
  UnitQuaternion q_SL;
};

/// Mount-point velocity of a track expressed in its own mount frame, for
/// samples stamped in [t0, t1]. Pose tracks use their own orientation;
/// position tracks take it from q_SL and the local estimate.
VectorSeries mountBodyVelocity(const SensorTrack& track, const LocalSeries& local, double t0,
                               double t1, double max_gap);

/// Local-estimate velocity at a mount point with extrinsic T_Is, in the
/// mount frame, for local samples stamped in [t0, t1].
VectorSeries localMountVelocity(const LocalSeries& local, const RigidTransform& extrinsic,
                                double t0, double t1);

/// Evaluates windowed consistency between tracks at one instant. Per-track
/// velocities are computed once and shared across pairs.
class ConsistencyEvaluator {
 public:
  ConsistencyEvaluator(std::vector<SensorTrack> tracks, const LocalSeries& local, double t,
                       const MetricConfig& cfg);

  std::size_t size() const { return tracks_.size(); }
  /// Track b transported into track a's mount frame, compared over the window.
  ConsistencyValue pair(std::size_t a, std::size_t b, MetricKind kind) const;
  ConsistencyValue pair(std::size_t a, std::size_t b) const { return pair(a, b, cfg_.metric); }
  ConsistencyValue againstLocal(std::size_t a, MetricKind kind) const;
  ConsistencyValue againstLocal(std::size_t a) const { return againstLocal(a, cfg_.metric); }

  /// Standardized window behind pair(a, b); nullopt on dropout.
  std::optional<VelocityWindow> pairWindow(std::size_t a, std::size_t b) const;
  std::optional<VelocityWindow> localWindow(std::size_t a) const;

 private:
  VectorSeries transported(std::size_t a, std::size_t b) const;
  std::optional<UnitQuaternion> mountOrientation(std::size_t i, double stamp) const;

  std::vector<SensorTrack> tracks_;
  const LocalSeries& local_;
  double t_;
  MetricConfig cfg_;
  double t0_;
  std::vector<VectorSeries> body_velocity_;
};

/// Pipeline for one pair: differentiate, transport B into A (with the
/// local estimate's bias-corrected rate), window, standardize, per-axis
/// metric, sum. Dropout marker on insufficient overlap.
ConsistencyValue consistency(const SensorTrack& a, const SensorTrack& b, const LocalSeries& local,
                             double t, const MetricConfig& cfg);

}  // namespace mfuse

#endif  // MFUSE_METRICS_HPP_
