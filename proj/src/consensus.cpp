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

#include "mfuse/consensus.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "mfuse/csv.hpp"

namespace mfuse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double localOrInf(const ConsistencyMatrix& m, std::size_t i) {
  const auto v = m.local(i);
  return v ? *v : kInf;
}

}  // namespace

ConsistencyMatrix::ConsistencyMatrix(std::vector<std::string> ids, double stamp)
    : ids_(std::move(ids)),
      stamp_(stamp),
      cells_(ids_.size() * ids_.size(), 0.0),
      local_(ids_.size(), 0.0),
      fusable_(ids_.size(), true) {
  std::vector<std::string> sorted = ids_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("consistency matrix ids must be unique");
  }
}

std::optional<std::size_t> ConsistencyMatrix::indexOf(std::string_view id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == id) return i;
  }
  return std::nullopt;
}

ConsistencyValue ConsistencyMatrix::at(std::size_t i, std::size_t j) const {
  return cells_[i * ids_.size() + j];
}

void ConsistencyMatrix::set(std::size_t i, std::size_t j, ConsistencyValue value) {
  if (i == j) throw std::invalid_argument("diagonal of the consistency matrix is fixed at 0");
  cells_[i * ids_.size() + j] = value;
  cells_[j * ids_.size() + i] = value;
}

bool ConsistencyMatrix::isDropout(std::size_t i) const {
  if (!local_[i]) return true;
  if (size() < 2) return false;
  for (std::size_t j = 0; j < size(); ++j) {
    if (j != i && at(i, j)) return false;
  }
  return true;
}

void ConsensusConfig::validate() const {
  if (!(threshold > 0.0)) throw std::invalid_argument("consensus threshold must be positive");
  if (hold_time < 0.0) throw std::invalid_argument("hold time must be non-negative");
}

std::string_view toString(DecisionReason reason) {
  switch (reason) {
    case DecisionReason::AllConsistent:
      return "AllConsistent";
    case DecisionReason::CrossPatternExclusion:
      return "CrossPatternExclusion";
    case DecisionReason::TwoSensorLocalArbitration:
      return "TwoSensorLocalArbitration";
    case DecisionReason::AllFaulty:
      return "AllFaulty";
  }
  return "AllFaulty";
}

ConsistencyMatrix buildMatrix(const std::vector<SensorTrack>& tracks, const LocalSeries& local,
                              double t, const MetricConfig& cfg) {
  if (tracks.size() < 2) throw std::invalid_argument("consistency matrix needs two sensors");
  std::vector<std::string> ids;
  ids.reserve(tracks.size());
  for (const auto& tr : tracks) ids.push_back(tr.stream->id());
  ConsistencyMatrix m(std::move(ids), t);
  const ConsistencyEvaluator eval(tracks, local, t, cfg);
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    m.setLocal(i, eval.againstLocal(i));
    for (std::size_t j = i + 1; j < tracks.size(); ++j) m.set(i, j, eval.pair(i, j));
  }
  return m;
}

FaultReport detectFaulty(const ConsistencyMatrix& m, const ConsensusConfig& cfg) {
  FaultReport report;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.fusable(i)) continue;
    if (m.isDropout(i)) {
      report.dropouts.insert(m.ids()[i]);
    } else {
      active.push_back(i);
    }
  }

  std::vector<std::size_t> candidates;
  bool any_exceedance = false;
  for (std::size_t i : active) {
    bool all_high = true;
    bool any_finite = false;
    for (std::size_t j : active) {
      if (j == i) continue;
      const auto v = m.at(i, j);
      if (!v) continue;
      any_finite = true;
      if (*v > cfg.threshold) {
        any_exceedance = true;
      } else {
        all_high = false;
      }
    }
    if (any_finite && all_high) candidates.push_back(i);
  }
  if (!any_exceedance) return report;

  const auto is_candidate = [&](std::size_t i) {
    return std::find(candidates.begin(), candidates.end(), i) != candidates.end();
  };
  bool verified = !candidates.empty() && candidates.size() + 2 <= active.size();
  for (std::size_t i : active) {
    if (!verified) break;
    if (is_candidate(i)) continue;
    for (std::size_t j : active) {
      if (j == i || is_candidate(j)) continue;
      const auto v = m.at(i, j);
      if (v && *v > cfg.threshold) {
        verified = false;
        break;
      }
    }
  }
  if (!verified) {
    report.ambiguous = true;
    return report;
  }
  for (std::size_t c : candidates) report.faulty.insert(m.ids()[c]);
  return report;
}

Arbitration arbitrateTwoSensors(const ConsistencyMatrix& m, std::size_t a, std::size_t b,
                                const std::optional<std::string>& currently_fused,
                                const ConsensusConfig& cfg) {
  const double la = localOrInf(m, a);
  const double lb = localOrInf(m, b);
  const std::string& ia = m.ids()[a];
  const std::string& ib = m.ids()[b];
  Arbitration out;
  if (la > cfg.threshold && lb > cfg.threshold) {
    out.outcome = ArbitrationOutcome::Indeterminate;
    if (currently_fused && (*currently_fused == ia || *currently_fused == ib)) {
      out.chosen = *currently_fused;
    } else {
      out.chosen = (la < lb || (la == lb && ia < ib)) ? ia : ib;
    }
    return out;
  }
  out.outcome = ArbitrationOutcome::Decided;
  out.chosen = (la < lb || (la == lb && ia < ib)) ? ia : ib;
  return out;
}

FusionDecision select(const ConsistencyMatrix& m, const FusionDecision& prev,
                      const ConsensusConfig& cfg) {
  FusionDecision d;
  d.stamp = m.stamp();
  const FaultReport report = detectFaulty(m, cfg);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.fusable(i)) d.excluded.insert(m.ids()[i]);
  }
  d.excluded.insert(report.dropouts.begin(), report.dropouts.end());
  d.excluded.insert(report.faulty.begin(), report.faulty.end());
  const bool flagged = !report.dropouts.empty() || !report.faulty.empty();

  std::vector<std::size_t> remaining;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!d.excluded.count(m.ids()[i])) remaining.push_back(i);
  }
  std::sort(remaining.begin(), remaining.end(),
            [&](std::size_t x, std::size_t y) { return m.ids()[x] < m.ids()[y]; });
  const auto healthy_reason =
      flagged ? DecisionReason::CrossPatternExclusion : DecisionReason::AllConsistent;

  if (remaining.empty()) {
    d.reason = DecisionReason::AllFaulty;
    return d;
  }
  if (remaining.size() == 1) {
    d.selected = m.ids()[remaining.front()];
    d.reason = healthy_reason;
    return d;
  }

  std::optional<std::pair<std::size_t, std::size_t>> best;
  double best_value = kInf;
  for (std::size_t x = 0; x < remaining.size(); ++x) {
    for (std::size_t y = x + 1; y < remaining.size(); ++y) {
      const auto v = m.at(remaining[x], remaining[y]);
      if (v && *v < best_value) {
        best_value = *v;
        best = std::make_pair(remaining[x], remaining[y]);
      }
    }
  }
  if (!best) {
    // No pair overlaps in time; fall back to agreement with the local estimate.
    std::size_t pick = remaining.front();
    for (std::size_t i : remaining) {
      if (prev.selected && m.ids()[i] == *prev.selected) {
        pick = i;
        break;
      }
      if (localOrInf(m, i) < localOrInf(m, pick)) pick = i;
    }
    d.selected = m.ids()[pick];
    d.reason = DecisionReason::TwoSensorLocalArbitration;
    return d;
  }

  const auto [a, b] = *best;
  if (best_value <= cfg.threshold) {
    const std::string& ia = m.ids()[a];
    const std::string& ib = m.ids()[b];
    if (prev.selected && (*prev.selected == ia || *prev.selected == ib)) {
      d.selected = *prev.selected;
    } else {
      const double la = localOrInf(m, a);
      const double lb = localOrInf(m, b);
      d.selected = (la < lb || (la == lb && ia < ib)) ? ia : ib;
    }
    d.reason = healthy_reason;
    return d;
  }

  const Arbitration arb = arbitrateTwoSensors(m, a, b, prev.selected, cfg);
  d.selected = arb.chosen;
  d.reason = DecisionReason::TwoSensorLocalArbitration;
  d.indeterminate = arb.outcome == ArbitrationOutcome::Indeterminate;
  return d;
}

ConsensusSelector::ConsensusSelector(ConsensusConfig cfg) : cfg_(cfg) { cfg_.validate(); }

const FusionDecision& ConsensusSelector::update(const ConsistencyMatrix& m) {
  FusionDecision proposed = select(m, decision_, cfg_);
  const auto& current = decision_.selected;
  if (proposed.selected != current && current && proposed.selected) {
    const bool current_available =
        m.indexOf(*current).has_value() && !proposed.excluded.count(*current);
    const bool holding = last_switch_ && m.stamp() - *last_switch_ < cfg_.hold_time;
    if (current_available && holding) {
      proposed.selected = current;
    } else {
      ++switches_;
      last_switch_ = m.stamp();
    }
  } else if (proposed.selected && !current && !last_fused_) {
    last_switch_ = m.stamp();
  } else if (proposed.selected && !current && last_fused_ && *last_fused_ != *proposed.selected) {
    ++switches_;
    last_switch_ = m.stamp();
  }
  if (proposed.selected) last_fused_ = proposed.selected;
  decision_ = std::move(proposed);
  return decision_;
}

void writeDecisionHeader(std::ostream& out) { out << "stamp,selected,excluded,reason\n"; }

void writeDecisionRow(std::ostream& out, const FusionDecision& d) {
  std::vector<std::string> excluded(d.excluded.begin(), d.excluded.end());
  out << csv::num(d.stamp) << ',' << (d.selected ? *d.selected : std::string("none")) << ','
      << csv::join(excluded, ';') << ',' << toString(d.reason) << '\n';
}

}  // namespace mfuse
