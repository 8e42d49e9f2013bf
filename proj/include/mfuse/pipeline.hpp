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

#ifndef MFUSE_PIPELINE_HPP_
#define MFUSE_PIPELINE_HPP_

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mfuse/consensus.hpp"
#include "mfuse/estimator.hpp"
#include "mfuse/metrics.hpp"
#include "mfuse/sim.hpp"

namespace mfuse {

/// Fusion strategy. Text forms: `single:<id>`, `clean:<id>` (single sensor,
/// uncorrupted stream), `naive`, `consensus`.
struct Strategy {
  enum class Kind { FuseSingle, FuseAllNaive, Consensus };
  Kind kind = Kind::Consensus;
  std::string sensor;
  bool clean = false;

  std::string name() const;
  /// Throws std::invalid_argument on unknown text.
  static Strategy parse(std::string_view text);
};

struct ErrorSample {
  double stamp = 0.0;
  double position_error = 0.0;  // m
  double rotation_error = 0.0;  // rad
};

struct ErrorReport {
  double ate_pos_rmse = 0.0;
  double rot_rmse = 0.0;
  std::vector<ErrorSample> series;
  std::size_t switch_count = 0;
};

/// Errors of an estimate against ground truth, matched by stamp. No
/// trajectory alignment is applied: both start in the same frame.
ErrorReport evaluateErrors(const LocalSeries& truth, const LocalSeries& estimate);

constexpr std::array<MetricKind, 4> kAllMetrics = {MetricKind::MAE, MetricKind::PCC,
                                                   MetricKind::KL, MetricKind::CM};

/// One consistency cell at one stamp, for every metric kind (indexed as
/// kAllMetrics). `pair` is "A-B" or "A-LOCAL".
struct MetricRecord {
  double stamp = 0.0;
  std::string pair;
  std::array<ConsistencyValue, 4> values;
  ConsistencyValue value(MetricKind kind) const;
};

struct TransformRecord {
  std::string sensor;
  SensorTransformState state;
};

struct RunResult {
  Strategy strategy;
  LocalSeries fused;
  /// Sensor feeding the local graph at each fused sample ("all" for naive).
  std::vector<std::optional<std::string>> fused_selected;
  std::vector<FusionDecision> decisions;
  std::vector<MetricRecord> metrics;
  std::vector<TransformRecord> transforms;
  ErrorReport report;
};

/// Runs the estimator over simulated streams under one strategy.
RunResult runPipeline(const Scenario& scenario, const SimulationOutput& sim,
                      const Strategy& strategy);

/// Runs several strategies on the same simulated data, on up to `threads`
/// workers. Results keep the order of `strategies`.
std::vector<RunResult> compareStrategies(const Scenario& scenario, const SimulationOutput& sim,
                                         const std::vector<Strategy>& strategies,
                                         unsigned threads = 1);

/// All four metrics on every pair window of the corrupted streams, sampled at
/// the decision rate. Transport uses the ground-truth kinematics and the
/// true sensor frames, so the values isolate the metric behavior.
std::vector<MetricRecord> metricShootout(const Scenario& scenario, const SimulationOutput& sim);

void writeMetricsCsv(std::ostream& out, const std::vector<MetricRecord>& records,
                     MetricKind kind);
void writeShootoutCsv(std::ostream& out, const std::vector<MetricRecord>& records);
void writeErrorsCsv(std::ostream& out, const ErrorReport& report);
void writeTransformsCsv(std::ostream& out, const std::vector<TransformRecord>& records);
void writeReportHeader(std::ostream& out);
void writeReportRow(std::ostream& out, const Strategy& strategy, const ErrorReport& report);

std::string versionString();

/// Resolved scenario and version stamp.
void writeProvenance(const std::filesystem::path& dir, const Scenario& scenario);
/// Everything a `run` leaves behind: provenance, streams, truth, metrics,
/// decisions, transforms, fused states, errors and the report row.
void writeRunOutputs(const std::filesystem::path& dir, const Scenario& scenario,
                     const SimulationOutput& sim, const RunResult& result);

}  // namespace mfuse

#endif  // MFUSE_PIPELINE_HPP_
