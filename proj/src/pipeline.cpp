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

#include "mfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "mfuse/csv.hpp"

#ifndef MFUSE_VERSION
#define MFUSE_VERSION "unknown"
#endif

namespace mfuse {

namespace {

constexpr double kStampTol = 1e-9;

// Fires once per period on a sample clock that need not divide the period.
class Ticker {
 public:
  Ticker(double start, double rate) : period_(1.0 / rate), next_(start + period_) {}
  bool due(double t) {
    if (t + kStampTol < next_) return false;
    while (next_ <= t + kStampTol) next_ += period_;
    return true;
  }

 private:
  double period_;
  double next_;
};

std::size_t metricIndex(MetricKind kind) {
  for (std::size_t i = 0; i < kAllMetrics.size(); ++i) {
    if (kAllMetrics[i] == kind) return i;
  }
  return 0;
}

std::array<ConsistencyValue, 4> allValues(const std::optional<VelocityWindow>& w,
                                          const MetricConfig& cfg) {
  std::array<ConsistencyValue, 4> out;
  if (!w) return out;
  for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
    out[k] = windowDistance(*w, kAllMetrics[k], cfg);
  }
  return out;
}

void writeFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::ofstream openCsv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

std::string Strategy::name() const {
  switch (kind) {
    case Kind::FuseSingle:
      return (clean ? "clean:" : "single:") + sensor;
    case Kind::FuseAllNaive:
      return "naive";
    case Kind::Consensus:
      return "consensus";
  }
  return "consensus";
}

Strategy Strategy::parse(std::string_view text) {
  Strategy s;
  if (text == "naive") {
    s.kind = Kind::FuseAllNaive;
    return s;
  }
  if (text == "consensus") {
    s.kind = Kind::Consensus;
    return s;
  }
  const auto colon = text.find(':');
  if (colon != std::string_view::npos && colon + 1 < text.size()) {
    const std::string_view head = text.substr(0, colon);
    if (head == "single" || head == "clean") {
      s.kind = Kind::FuseSingle;
      s.clean = head == "clean";
      s.sensor = std::string(text.substr(colon + 1));
      return s;
    }
  }
  throw std::invalid_argument("unknown strategy '" + std::string(text) +
                              "' (expected single:<id>, clean:<id>, naive or consensus)");
}

ErrorReport evaluateErrors(const LocalSeries& truth, const LocalSeries& estimate) {
  ErrorReport report;
  report.series.reserve(estimate.size());
  double sum_p = 0.0;
  double sum_r = 0.0;
  auto it = truth.begin();
  for (const auto& e : estimate) {
    const double t = e.state.stamp;
    it = std::lower_bound(it, truth.end(), t - kStampTol,
                          [](const LocalSample& s, double v) { return s.state.stamp < v; });
    if (it == truth.end()) break;
    if (std::abs(it->state.stamp - t) > kStampTol) continue;
    ErrorSample s;
    s.stamp = t;
    s.position_error = (e.state.p_LI - it->state.p_LI).norm();
    s.rotation_error = boxminus(e.state.q_LI, it->state.q_LI).norm();
    sum_p += s.position_error * s.position_error;
    sum_r += s.rotation_error * s.rotation_error;
    report.series.push_back(s);
  }
  if (!report.series.empty()) {
    const double n = static_cast<double>(report.series.size());
    report.ate_pos_rmse = std::sqrt(sum_p / n);
    report.rot_rmse = std::sqrt(sum_r / n);
  }
  return report;
}

ConsistencyValue MetricRecord::value(MetricKind kind) const { return values[metricIndex(kind)]; }

RunResult runPipeline(const Scenario& scenario, const SimulationOutput& sim,
                      const Strategy& strategy) {
  using Kind = Strategy::Kind;
  const PipelineSettings& cfg = scenario.pipeline;
  const std::size_t n = scenario.sensors.size();
  if (sim.corrupted.size() != n || sim.clean.size() != n || sim.truth.empty()) {
    throw std::invalid_argument("simulation output does not match the scenario");
  }

  std::vector<const SensorStream*> streams(n);
  for (std::size_t i = 0; i < n; ++i) streams[i] = &sim.corrupted[i];
  std::optional<std::size_t> single;
  if (strategy.kind == Kind::FuseSingle) {
    for (std::size_t i = 0; i < n; ++i) {
      if (scenario.sensors[i].id == strategy.sensor) single = i;
    }
    if (!single) throw std::invalid_argument("strategy names unknown sensor " + strategy.sensor);
    if (strategy.clean) streams[*single] = &sim.clean[*single];
  }

  LocalGraphConfig lcfg = cfg.local;
  lcfg.imu_rate = scenario.imu.rate;
  lcfg.imu_noise = scenario.imu.noise;
  const NavState initial = sim.truth.front().state;
  LocalGraph graph(lcfg, initial);

  std::vector<TransformGraph> transforms;
  std::vector<std::string> ids;
  transforms.reserve(n);
  for (const auto& spec : scenario.sensors) {
    transforms.emplace_back(spec.id, spec.modality, spec.noise, cfg.transform);
    ids.push_back(spec.id);
  }
  ConsensusSelector selector(cfg.consensus);
  std::optional<std::string> selected;
  if (strategy.kind == Kind::FuseSingle) selected = strategy.sensor;
  if (strategy.kind == Kind::FuseAllNaive) selected = "all";

  RunResult res;
  res.strategy = strategy;
  res.fused.reserve(sim.imu.size());
  res.fused_selected.reserve(sim.imu.size());

  const auto fusing = [&](std::size_t i) {
    switch (strategy.kind) {
      case Kind::FuseAllNaive:
        return true;
      case Kind::FuseSingle:
        return single == i;
      case Kind::Consensus:
        return selected == ids[i];
    }
    return false;
  };

  std::vector<std::size_t> fuse_cursor(n, 0);
  std::vector<std::size_t> tf_cursor(n, 0);
  Ticker opt_tick(initial.stamp, lcfg.optimize_rate);
  Ticker tf_tick(initial.stamp, cfg.transform.rate);
  Ticker dec_tick(initial.stamp, cfg.decision_rate);
  const std::size_t cm_index = metricIndex(cfg.metric.metric);

  for (std::size_t k = 0; k < sim.imu.size(); ++k) {
    const double t = sim.imu[k].stamp;
    if (t < initial.stamp) continue;
    graph.addImu(t, sim.imu.imu(k));

    for (std::size_t i = 0; i < n; ++i) {
      const SensorStream& s = *streams[i];
      const SensorSpec& spec = scenario.sensors[i];
      for (auto& c = fuse_cursor[i]; c < s.size() && s[c].stamp <= t + kStampTol; ++c) {
        const double stamp = s[c].stamp;
        if (stamp < initial.stamp || !fusing(i)) continue;
        if (s.modality() == Modality::Pose) {
          graph.addPose(spec.id, stamp, s.pose(c), s.extrinsic(), spec.noise);
          continue;
        }
        UnitQuaternion q_AL;
        if (strategy.kind == Kind::FuseAllNaive) {
          q_AL = scenario.frameAt(spec.id, stamp).rotation;
        } else if (transforms[i].state().available) {
          q_AL = transforms[i].state().q_AL;
        } else {
          continue;
        }
        graph.addPosition(spec.id, stamp, s.position(c), s.extrinsic(), q_AL, spec.noise);
      }
    }
    if (opt_tick.due(t)) graph.optimize();
    res.fused.push_back(graph.publish());
    res.fused_selected.push_back(selected);

    for (std::size_t i = 0; i < n; ++i) {
      const SensorStream& s = *streams[i];
      for (auto& c = tf_cursor[i]; c < s.size() && s[c].stamp <= t + kStampTol; ++c) {
        const auto ls = interpolate(res.fused, s[c].stamp);
        if (!ls) continue;
        std::optional<UnitQuaternion> q_bar;
        if (s.modality() == Modality::Pose) q_bar = s.pose(c).rotation;
        transforms[i].addMeasurement(s[c].stamp, s.position(c), q_bar,
                                     ls->state.pose() * s.extrinsic());
      }
    }
    if (tf_tick.due(t)) {
      for (std::size_t i = 0; i < n; ++i) {
        // The transform of the position sensor being fused stays fixed so
        // it cannot co-adapt with the local estimate it constrains.
        if (scenario.sensors[i].modality == Modality::Position) {
          transforms[i].setFrozen(strategy.kind != Kind::FuseAllNaive && fusing(i));
        }
        transforms[i].update(t);
        res.transforms.push_back({ids[i], transforms[i].state()});
      }
    }

    if (dec_tick.due(t) && n >= 2) {
      std::vector<SensorTrack> tracks;
      tracks.reserve(n);
      for (std::size_t i = 0; i < n; ++i) tracks.push_back({streams[i], transforms[i].state().q_AL});
      const ConsistencyEvaluator eval(tracks, res.fused, t, cfg.metric);
      ConsistencyMatrix m(ids, t);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          MetricRecord rec{t, ids[i] + "-" + ids[j], allValues(eval.pairWindow(i, j), cfg.metric)};
          m.set(i, j, rec.values[cm_index]);
          res.metrics.push_back(std::move(rec));
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        MetricRecord rec{t, ids[i] + "-LOCAL", allValues(eval.localWindow(i), cfg.metric)};
        m.setLocal(i, rec.values[cm_index]);
        m.setFusable(i, transforms[i].state().available);
        res.metrics.push_back(std::move(rec));
      }
      if (strategy.kind == Kind::Consensus) {
        const FusionDecision& d = selector.update(m);
        res.decisions.push_back(d);
        selected = d.selected;
      }
    }
  }

  res.report = evaluateErrors(sim.truth, res.fused);
  if (strategy.kind == Kind::Consensus) res.report.switch_count = selector.switchCount();
  return res;
}

std::vector<RunResult> compareStrategies(const Scenario& scenario, const SimulationOutput& sim,
                                         const std::vector<Strategy>& strategies,
                                         unsigned threads) {
  if (strategies.size() < 2) throw std::invalid_argument("compare needs at least two strategies");
  std::vector<RunResult> results(strategies.size());
  std::vector<std::exception_ptr> errors(strategies.size());
  const auto work = [&](std::size_t i) {
    try {
      results[i] = runPipeline(scenario, sim, strategies[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const unsigned workers =
      std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(strategies.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < strategies.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < strategies.size(); i += workers) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<MetricRecord> metricShootout(const Scenario& scenario, const SimulationOutput& sim) {
  const std::size_t n = scenario.sensors.size();
  std::vector<MetricRecord> out;
  const double period = 1.0 / scenario.pipeline.decision_rate;
  const double end = sim.truth.back().state.stamp;
  for (long k = 1;; ++k) {
    const double t = static_cast<double>(k) * period;
    if (t > end + kStampTol) break;
    std::vector<SensorTrack> tracks;
    tracks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      tracks.push_back({&sim.corrupted[i], scenario.frameAt(scenario.sensors[i].id, t).rotation});
    }
    const ConsistencyEvaluator eval(tracks, sim.truth, t, scenario.pipeline.metric);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        out.push_back({t, scenario.sensors[i].id + "-" + scenario.sensors[j].id,
                       allValues(eval.pairWindow(i, j), scenario.pipeline.metric)});
      }
    }
  }
  return out;
}

void writeMetricsCsv(std::ostream& out, const std::vector<MetricRecord>& records,
                     MetricKind kind) {
  out << "stamp,pair,metric_value\n";
  for (const auto& r : records) {
    out << csv::num(r.stamp) << ',' << r.pair << ',' << csv::num(reportedValue(r.value(kind)))
        << '\n';
  }
}

void writeShootoutCsv(std::ostream& out, const std::vector<MetricRecord>& records) {
  out << "stamp,pair,mae,pcc,kl,cm\n";
  for (const auto& r : records) {
    out << csv::num(r.stamp) << ',' << r.pair;
    for (const auto& v : r.values) out << ',' << csv::num(reportedValue(v));
    out << '\n';
  }
}

void writeErrorsCsv(std::ostream& out, const ErrorReport& report) {
  out << "stamp,position_error,rotation_error\n";
  for (const auto& s : report.series) {
    out << csv::num(s.stamp) << ',' << csv::num(s.position_error) << ','
        << csv::num(s.rotation_error) << '\n';
  }
}

void writeTransformsCsv(std::ostream& out, const std::vector<TransformRecord>& records) {
  out << "stamp,sensor,qw,qx,qy,qz,px,py,pz,observable,available,frozen\n";
  for (const auto& r : records) {
    const auto& s = r.state;
    out << csv::num(s.stamp) << ',' << r.sensor << ',' << csv::num(s.q_AL.w()) << ','
        << csv::num(s.q_AL.x()) << ',' << csv::num(s.q_AL.y()) << ',' << csv::num(s.q_AL.z())
        << ',' << csv::num(s.p_AL.x()) << ',' << csv::num(s.p_AL.y()) << ','
        << csv::num(s.p_AL.z()) << ',' << int(s.observable) << ',' << int(s.available) << ','
        << int(s.frozen) << '\n';
  }
}

void writeReportHeader(std::ostream& out) { out << "strategy,ate_pos_rmse,rot_rmse,switch_count\n"; }

void writeReportRow(std::ostream& out, const Strategy& strategy, const ErrorReport& report) {
  out << strategy.name() << ',' << csv::num(report.ate_pos_rmse) << ','
      << csv::num(report.rot_rmse) << ',' << report.switch_count << '\n';
}

std::string versionString() { return std::string("mfuse ") + MFUSE_VERSION; }

void writeProvenance(const std::filesystem::path& dir, const Scenario& scenario) {
  std::filesystem::create_directories(dir);
  writeFile(dir / "scenario.json", dumpScenario(scenario));
  writeFile(dir / "VERSION", versionString() + "\n");
}

void writeRunOutputs(const std::filesystem::path& dir, const Scenario& scenario,
                     const SimulationOutput& sim, const RunResult& result) {
  writeProvenance(dir, scenario);
  {
    std::vector<SensorStream> streams;
    streams.push_back(sim.imu);
    for (std::size_t i = 0; i < sim.corrupted.size(); ++i) {
      const bool clean = result.strategy.kind == Strategy::Kind::FuseSingle &&
                         result.strategy.clean && scenario.sensors[i].id == result.strategy.sensor;
      streams.push_back(clean ? sim.clean[i] : sim.corrupted[i]);
    }
    auto out = openCsv(dir / "streams.csv");
    writeStreamsCsv(out, streams);
  }
  {
    auto out = openCsv(dir / "truth.csv");
    writeFusedHeader(out);
    for (const auto& s : sim.truth) writeFusedRow(out, s, std::nullopt);
  }
  {
    auto out = openCsv(dir / "metrics.csv");
    writeMetricsCsv(out, result.metrics, scenario.pipeline.metric.metric);
  }
  {
    auto out = openCsv(dir / "decisions.csv");
    writeDecisionHeader(out);
    for (const auto& d : result.decisions) writeDecisionRow(out, d);
  }
  {
    auto out = openCsv(dir / "transforms.csv");
    writeTransformsCsv(out, result.transforms);
  }
  {
    auto out = openCsv(dir / "fused.csv");
    writeFusedHeader(out);
    for (std::size_t i = 0; i < result.fused.size(); ++i) {
      writeFusedRow(out, result.fused[i], result.fused_selected[i]);
    }
  }
  {
    auto out = openCsv(dir / "errors.csv");
    writeErrorsCsv(out, result.report);
  }
  {
    auto out = openCsv(dir / "report.csv");
    writeReportHeader(out);
    writeReportRow(out, result.strategy, result.report);
  }
}

}  // namespace mfuse
