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

#ifndef MFUSE_CONSENSUS_HPP_
#define MFUSE_CONSENSUS_HPP_

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mfuse/metrics.hpp"
#include "mfuse/nav_state.hpp"

namespace mfuse {

/// Pairwise consistency values between sensors plus each sensor against the
/// local estimate. Cells hold nullopt for dropouts.
class ConsistencyMatrix {
 public:
  ConsistencyMatrix(std::vector<std::string> ids, double stamp);

  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  double stamp() const { return stamp_; }
  std::optional<std::size_t> indexOf(std::string_view id) const;

  ConsistencyValue at(std::size_t i, std::size_t j) const;
  /// Sets both (i, j) and (j, i). Writing the diagonal is rejected.
  void set(std::size_t i, std::size_t j, ConsistencyValue value);
  ConsistencyValue local(std::size_t i) const { return local_[i]; }
  void setLocal(std::size_t i, ConsistencyValue value) { local_[i] = value; }
  /// A sensor is fusable when its measurements can enter the local graph
  /// (position sensors need a transform estimate first).
  bool fusable(std::size_t i) const { return fusable_[i]; }
  void setFusable(std::size_t i, bool value) { fusable_[i] = value; }

  bool isDropout(std::size_t i) const;

 private:
  std::vector<std::string> ids_;
  double stamp_;
  std::vector<ConsistencyValue> cells_;
  std::vector<ConsistencyValue> local_;
  std::vector<bool> fusable_;
};

struct ConsensusConfig {
  double threshold = 0.1;  // m/s
  double hold_time = 1.0;  // s
  void validate() const;
};

enum class DecisionReason { AllConsistent, CrossPatternExclusion, TwoSensorLocalArbitration, AllFaulty };

std::string_view toString(DecisionReason reason);

struct FusionDecision {
  double stamp = 0.0;
  std::optional<std::string> selected;
  std::set<std::string> excluded;
  DecisionReason reason = DecisionReason::AllFaulty;
  /// Set when local arbitration could not decide and the previous choice was kept.
  bool indeterminate = false;
};

/// Evaluates all unordered pairs (lower index is the reference frame) and the
/// LOCAL column at time t. Every sensor is marked fusable.
ConsistencyMatrix buildMatrix(const std::vector<SensorTrack>& tracks, const LocalSeries& local,
                              double t, const MetricConfig& cfg);

struct FaultReport {
  std::set<std::string> faulty;
  std::set<std::string> dropouts;
  /// Exceedances do not form a cross pattern.
  bool ambiguous = false;
};

/// Cross-pattern search over the fusable sensors. A candidate is a sensor
/// whose finite off-diagonal entries all exceed the threshold; the pattern
/// holds when every entry among the remaining sensors stays below it and at
/// least two sensors remain as witnesses. Dropouts are flagged unconditionally.
FaultReport detectFaulty(const ConsistencyMatrix& m, const ConsensusConfig& cfg);

enum class ArbitrationOutcome { Decided, Indeterminate };

struct Arbitration {
  ArbitrationOutcome outcome = ArbitrationOutcome::Indeterminate;
  std::string chosen;
};

/// Degenerate two-sensor case: the member closer to the local estimate wins.
/// Indeterminate when both LOCAL values exceed the threshold; `chosen` then
/// holds the currently fused sensor if it is a member.
Arbitration arbitrateTwoSensors(const ConsistencyMatrix& m, std::size_t a, std::size_t b,
                                const std::optional<std::string>& currently_fused,
                                const ConsensusConfig& cfg);

/// One-shot selection without dwell-time state.
FusionDecision select(const ConsistencyMatrix& m, const FusionDecision& prev,
                      const ConsensusConfig& cfg);

/// Stateful selector applying the dwell time. A switch away from a sensor that
/// became excluded is made immediately.
class ConsensusSelector {
 public:
  explicit ConsensusSelector(ConsensusConfig cfg);

  const FusionDecision& update(const ConsistencyMatrix& m);
  const FusionDecision& current() const { return decision_; }
  std::size_t switchCount() const { return switches_; }

 private:
  ConsensusConfig cfg_;
  FusionDecision decision_;
  std::optional<double> last_switch_;
  std::optional<std::string> last_fused_;
  std::size_t switches_ = 0;
};

void writeDecisionHeader(std::ostream& out);
void writeDecisionRow(std::ostream& out, const FusionDecision& d);

}  // namespace mfuse

#endif  // MFUSE_CONSENSUS_HPP_
