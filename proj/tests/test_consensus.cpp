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


#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mfuse/consensus.hpp"
#include "test_support.hpp"

namespace mfuse {
namespace {

const std::vector<std::string> kFour{"S1", "S2", "S3", "S4"};

// Matrix with every cell `low` except rows/columns of `bad`, set to `high`.
ConsistencyMatrix pattern(const std::vector<std::string>& ids, const std::vector<std::size_t>& bad,
                          double low = 0.03, double high = 0.6) {
  ConsistencyMatrix m(ids, 1.0);
  const auto is_bad = [&](std::size_t i) {
    return std::find(bad.begin(), bad.end(), i) != bad.end();
  };
  for (std::size_t i = 0; i < ids.size(); ++i) {
    m.setLocal(i, is_bad(i) ? high : low);
    for (std::size_t j = i + 1; j < ids.size(); ++j) m.set(i, j, (is_bad(i) || is_bad(j)) ? high : low);
  }
  return m;
}

TEST(ConsistencyMatrix, DiagonalIsZeroAndSymmetric) {
  ConsistencyMatrix m(kFour, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.at(i, i), 0.0);
  m.set(0, 2, 0.25);
  EXPECT_EQ(m.at(2, 0), 0.25);
  EXPECT_THROW(m.set(1, 1, 0.5), std::invalid_argument);
  EXPECT_THROW(ConsistencyMatrix({"A", "A"}, 0.0), std::invalid_argument);
  EXPECT_EQ(m.indexOf("S3"), 2u);
  EXPECT_FALSE(m.indexOf("S9"));
}

TEST(DetectFaulty, SingleFailure) {
  const FaultReport r = detectFaulty(pattern(kFour, {3}), ConsensusConfig{});
  EXPECT_EQ(r.faulty, (std::set<std::string>{"S4"}));
  EXPECT_FALSE(r.ambiguous);
}

TEST(DetectFaulty, DoubleFailure) {
  const FaultReport r = detectFaulty(pattern(kFour, {1, 3}), ConsensusConfig{});
  EXPECT_EQ(r.faulty, (std::set<std::string>{"S2", "S4"}));
}

TEST(DetectFaulty, AllConsistent) {
  const FaultReport r = detectFaulty(pattern(kFour, {}), ConsensusConfig{});
  EXPECT_TRUE(r.faulty.empty());
  EXPECT_TRUE(r.dropouts.empty());
  EXPECT_FALSE(r.ambiguous);
}

TEST(DetectFaulty, PartialExceedanceIsAmbiguous) {
  ConsistencyMatrix m = pattern(kFour, {});
  m.set(0, 1, 0.5);
  const FaultReport r = detectFaulty(m, ConsensusConfig{});
  EXPECT_TRUE(r.faulty.empty());
  EXPECT_TRUE(r.ambiguous);
}

TEST(DetectFaulty, NeedsTwoWitnesses) {
  // With three sensors and two of them high everywhere, one witness is left.
  const FaultReport r = detectFaulty(pattern({"A", "B", "C"}, {0, 1}), ConsensusConfig{});
  EXPECT_TRUE(r.faulty.empty());
  EXPECT_TRUE(r.ambiguous);
}

TEST(DetectFaulty, DropoutFlaggedUnconditionally) {
  ConsistencyMatrix m = pattern(kFour, {});
  for (std::size_t j = 0; j < 4; ++j) {
    if (j != 2) m.set(2, j, std::nullopt);
  }
  m.setLocal(2, std::nullopt);
  const FaultReport r = detectFaulty(m, ConsensusConfig{});
  EXPECT_EQ(r.dropouts, (std::set<std::string>{"S3"}));
  EXPECT_TRUE(r.faulty.empty());
}

TEST(ArbitrateTwoSensors, CloserToLocalWins) {
  ConsistencyMatrix m({"A", "B"}, 0.0);
  m.set(0, 1, 0.5);
  m.setLocal(0, 0.03);
  m.setLocal(1, 0.4);
  const Arbitration a = arbitrateTwoSensors(m, 0, 1, std::nullopt, ConsensusConfig{});
  EXPECT_EQ(a.outcome, ArbitrationOutcome::Decided);
  EXPECT_EQ(a.chosen, "A");
}

TEST(ArbitrateTwoSensors, BothFarIsIndeterminate) {
  ConsistencyMatrix m({"A", "B"}, 0.0);
  m.set(0, 1, 0.5);
  m.setLocal(0, 0.5);
  m.setLocal(1, 0.45);
  const Arbitration a = arbitrateTwoSensors(m, 0, 1, std::string("A"), ConsensusConfig{});
  EXPECT_EQ(a.outcome, ArbitrationOutcome::Indeterminate);
  EXPECT_EQ(a.chosen, "A");
}

TEST(Select, StickyWithinBestPair) {
  ConsistencyMatrix m = pattern(kFour, {});
  m.set(0, 1, 0.01);  // S1-S2 is the best pair
  FusionDecision prev;
  prev.selected = "S2";
  EXPECT_EQ(select(m, prev, ConsensusConfig{}).selected, "S2");
  prev.selected = "S1";
  EXPECT_EQ(select(m, prev, ConsensusConfig{}).selected, "S1");
}

TEST(Select, PicksCloserToLocalWhenPrevOutsidePair) {
  ConsistencyMatrix m = pattern(kFour, {});
  m.set(1, 2, 0.01);
  m.setLocal(1, 0.05);
  m.setLocal(2, 0.02);
  FusionDecision prev;
  prev.selected = "S1";
  const FusionDecision d = select(m, prev, ConsensusConfig{});
  EXPECT_EQ(d.selected, "S3");
  EXPECT_EQ(d.reason, DecisionReason::AllConsistent);
}

TEST(Select, ExcludesCrossPatternFault) {
  FusionDecision prev;
  prev.selected = "S4";
  const FusionDecision d = select(pattern(kFour, {3}), prev, ConsensusConfig{});
  EXPECT_TRUE(d.excluded.count("S4"));
  ASSERT_TRUE(d.selected);
  EXPECT_NE(*d.selected, "S4");
  EXPECT_EQ(d.reason, DecisionReason::CrossPatternExclusion);
}

TEST(Select, AllDroppedOut) {
  ConsistencyMatrix m(kFour, 2.0);
  for (std::size_t i = 0; i < 4; ++i) {
    m.setLocal(i, std::nullopt);
    for (std::size_t j = i + 1; j < 4; ++j) m.set(i, j, std::nullopt);
  }
  const FusionDecision d = select(m, FusionDecision{}, ConsensusConfig{});
  EXPECT_EQ(d.reason, DecisionReason::AllFaulty);
  EXPECT_FALSE(d.selected);
  EXPECT_EQ(d.excluded.size(), 4u);
}

TEST(Select, SingleRemainingSensorFallsBack) {
  ConsistencyMatrix m = pattern({"A", "B"}, {});
  m.setFusable(1, false);
  const FusionDecision d = select(m, FusionDecision{}, ConsensusConfig{});
  EXPECT_EQ(d.selected, "A");
}

TEST(Select, InconsistentPairUsesLocalArbitration) {
  ConsistencyMatrix m({"A", "B"}, 0.0);
  m.set(0, 1, 0.7);
  m.setLocal(0, 0.6);
  m.setLocal(1, 0.02);
  FusionDecision prev;
  prev.selected = "A";
  const FusionDecision d = select(m, prev, ConsensusConfig{});
  EXPECT_EQ(d.selected, "B");
  EXPECT_EQ(d.reason, DecisionReason::TwoSensorLocalArbitration);
}

TEST(ConsensusSelector, HoldTimeLimitsSwitching) {
  ConsensusConfig cfg;
  cfg.hold_time = 1.0;
  ConsensusSelector sel(cfg);
  std::vector<double> switches;
  std::optional<std::string> last;
  for (int k = 0; k < 100; ++k) {
    const double t = 0.1 * k;
    ConsistencyMatrix m({"A", "B", "C"}, t);
    // The best pair flips every decision.
    const bool even = k % 2 == 0;
    m.set(0, 1, even ? 0.01 : 0.05);
    m.set(1, 2, 0.05);
    m.set(0, 2, even ? 0.05 : 0.01);
    m.setLocal(0, 0.02);
    m.setLocal(1, even ? 0.01 : 0.03);
    m.setLocal(2, even ? 0.03 : 0.01);
    const FusionDecision& d = sel.update(m);
    if (last && d.selected != last) switches.push_back(t);
    last = d.selected;
  }
  for (std::size_t i = 1; i < switches.size(); ++i) {
    EXPECT_GE(switches[i] - switches[i - 1], cfg.hold_time - 1e-9);
  }
  EXPECT_EQ(sel.switchCount(), switches.size());
}

TEST(ConsensusSelector, LeavesExcludedSensorImmediately) {
  ConsensusSelector sel(ConsensusConfig{});
  ConsistencyMatrix healthy = pattern(kFour, {});
  healthy.set(2, 3, 0.001);
  EXPECT_EQ(sel.update(healthy).selected, "S3");
  ConsistencyMatrix bad = pattern(kFour, {2});
  const FusionDecision& d = sel.update(bad);
  ASSERT_TRUE(d.selected);
  EXPECT_NE(*d.selected, "S3");
  EXPECT_EQ(sel.switchCount(), 1u);
}

TEST(DecisionCsv, RowFormat) {
  FusionDecision d;
  d.stamp = 1.5;
  d.selected = "S1";
  d.excluded = {"S4", "S2"};
  d.reason = DecisionReason::CrossPatternExclusion;
  std::ostringstream out;
  writeDecisionHeader(out);
  writeDecisionRow(out, d);
  EXPECT_EQ(out.str(), "stamp,selected,excluded,reason\n1.5,S1,S2;S4,CrossPatternExclusion\n");
}

class BuildMatrixTest : public ::testing::Test {
 protected:
  BuildMatrixTest()
      : traj_(testing::lateralSpec(8.0)), local_(testing::truthSeries(traj_, 200.0)) {}
  Trajectory traj_;
  LocalSeries local_;
};

TEST_F(BuildMatrixTest, IdenticalNoiselessSensorsAreConsistent) {
  std::vector<SensorStream> streams;
  for (const char* id : {"A", "B", "C"}) {
    streams.push_back(testing::noiselessStream(id, Modality::Pose, 20.0, traj_, RigidTransform(),
                                               RigidTransform()));
  }
  std::vector<SensorTrack> tracks;
  for (const auto& s : streams) tracks.push_back({&s, {}});
  const ConsistencyMatrix m = buildMatrix(tracks, local_, 6.0, MetricConfig{});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m.at(i, i), 0.0);
    ASSERT_TRUE(m.local(i));
    EXPECT_LT(*m.local(i), 0.1);
    for (std::size_t j = 0; j < 3; ++j) {
      ASSERT_TRUE(m.at(i, j));
      EXPECT_LT(*m.at(i, j), 0.1);
    }
  }
}

TEST_F(BuildMatrixTest, FrozenSensorRowIsDropout) {
  std::vector<SensorStream> streams;
  for (const char* id : {"A", "B", "C"}) {
    streams.push_back(testing::noiselessStream(id, Modality::Pose, 20.0, traj_, RigidTransform(),
                                               RigidTransform()));
  }
  std::vector<TimedSample> early;
  for (const auto& s : streams[1].samples()) {
    if (s.stamp < 3.0) early.push_back(s);
  }
  streams[1] = streams[1].withSamples(early);
  std::vector<SensorTrack> tracks;
  for (const auto& s : streams) tracks.push_back({&s, {}});
  const ConsistencyMatrix m = buildMatrix(tracks, local_, 6.0, MetricConfig{});
  EXPECT_FALSE(m.at(0, 1));
  EXPECT_FALSE(m.at(1, 2));
  EXPECT_FALSE(m.local(1));
  EXPECT_TRUE(m.at(0, 2));
  EXPECT_TRUE(m.isDropout(1));
  EXPECT_FALSE(m.isDropout(0));
  EXPECT_EQ(reportedValue(m.at(0, 1)), kDropoutMarker);
}

}  // namespace
}  // namespace mfuse
