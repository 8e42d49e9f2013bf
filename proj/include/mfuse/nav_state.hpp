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

#ifndef MFUSE_NAV_STATE_HPP_
#define MFUSE_NAV_STATE_HPP_

#include <optional>
#include <vector>

#include "mfuse/geometry.hpp"

namespace mfuse {

/// Local-graph state: orientation and position of the IMU frame I in the
/// local frame L, body-frame velocity, and IMU biases.
struct NavState {
  double stamp = 0.0;
  UnitQuaternion q_LI;
  Vec3 p_LI = Vec3::Zero();
  Vec3 v_I = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();

  Vec3 velocityInLocal() const { return q_LI * v_I; }
  RigidTransform pose() const { return {q_LI, p_LI}; }
};

/// One published local estimate together with the bias-corrected body rate.
struct LocalSample {
  NavState state;
  Vec3 omega_I = Vec3::Zero();
};

using LocalSeries = std::vector<LocalSample>;

/// Interpolates a stamp-ordered series (linear in position/velocity/bias,
/// slerp in rotation). Returns nullopt outside the covered span.
std::optional<LocalSample> interpolate(const LocalSeries& series, double stamp);

}  // namespace mfuse

#endif  // MFUSE_NAV_STATE_HPP_
