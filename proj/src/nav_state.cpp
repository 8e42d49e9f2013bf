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

#include "mfuse/nav_state.hpp"

#include <algorithm>

namespace mfuse {

std::optional<LocalSample> interpolate(const LocalSeries& series, double stamp) {
  if (series.empty() || stamp < series.front().state.stamp ||
      stamp > series.back().state.stamp) {
    return std::nullopt;
  }
  auto it = std::lower_bound(
      series.begin(), series.end(), stamp,
      [](const LocalSample& s, double t) { return s.state.stamp < t; });
  if (it->state.stamp == stamp || it == series.begin()) return *it;
  const LocalSample& hi = *it;
  const LocalSample& lo = *(it - 1);
  const double s = (stamp - lo.state.stamp) / (hi.state.stamp - lo.state.stamp);
  LocalSample out;
  out.state.stamp = stamp;
  out.state.q_LI = slerp(lo.state.q_LI, hi.state.q_LI, s);
  out.state.p_LI = (1.0 - s) * lo.state.p_LI + s * hi.state.p_LI;
  out.state.v_I = (1.0 - s) * lo.state.v_I + s * hi.state.v_I;
  out.state.b_a = (1.0 - s) * lo.state.b_a + s * hi.state.b_a;
  out.state.b_g = (1.0 - s) * lo.state.b_g + s * hi.state.b_g;
  out.omega_I = (1.0 - s) * lo.omega_I + s * hi.omega_I;
  return out;
}

}  // namespace mfuse
