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

#include "mfuse/signals.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "mfuse/csv.hpp"

namespace mfuse {

std::string_view toString(Modality modality) {
  switch (modality) {
    case Modality::Pose:
      return "pose";
    case Modality::Position:
      return "position";
    case Modality::Imu:
      return "imu";
  }
  return "unknown";
}

Modality modalityFromString(std::string_view name) {
  if (name == "pose") return Modality::Pose;
  if (name == "position") return Modality::Position;
  if (name == "imu") return Modality::Imu;
  throw std::invalid_argument("unknown modality '" + std::string(name) + "'");
}

namespace {

bool payloadMatches(Modality modality, const Payload& payload) {
  switch (modality) {
    case Modality::Pose:
      return std::holds_alternative<RigidTransform>(payload);
    case Modality::Position:
      return std::holds_alternative<Vec3>(payload);
    case Modality::Imu:
      return std::holds_alternative<ImuReading>(payload);
  }
  return false;
}

}  // namespace

SensorStream::SensorStream(std::string id, Modality modality, double rate,
                           RigidTransform extrinsic)
    : id_(std::move(id)), modality_(modality), rate_(rate), extrinsic_(extrinsic) {}

void SensorStream::append(TimedSample sample) {
  if (!payloadMatches(modality_, sample.payload)) {
    throw std::invalid_argument("stream '" + id_ + "': payload does not match modality");
  }
  if (!samples_.empty() && !(sample.stamp > samples_.back().stamp)) {
    throw std::invalid_argument("stream '" + id_ + "': stamps must strictly increase");
  }
  samples_.push_back(std::move(sample));
}

SensorStream SensorStream::withSamples(std::vector<TimedSample> samples) const {
  SensorStream out(id_, modality_, rate_, extrinsic_);
  out.reserve(samples.size());
  for (auto& s : samples) out.append(std::move(s));
  return out;
}

Vec3 SensorStream::position(std::size_t i) const {
  const Payload& p = samples_.at(i).payload;
  if (const auto* pose = std::get_if<RigidTransform>(&p)) return pose->translation;
  if (const auto* pos = std::get_if<Vec3>(&p)) return *pos;
  throw std::logic_error("stream '" + id_ + "' has no position channel");
}

const RigidTransform& SensorStream::pose(std::size_t i) const {
  return std::get<RigidTransform>(samples_.at(i).payload);
}

const ImuReading& SensorStream::imu(std::size_t i) const {
  return std::get<ImuReading>(samples_.at(i).payload);
}

std::pair<std::size_t, std::size_t> SensorStream::indexRange(double t0, double t1) const {
  auto lo = std::lower_bound(samples_.begin(), samples_.end(), t0,
                             [](const TimedSample& s, double t) { return s.stamp < t; });
  auto hi = std::upper_bound(samples_.begin(), samples_.end(), t1,
                             [](double t, const TimedSample& s) { return t < s.stamp; });
  return {static_cast<std::size_t>(lo - samples_.begin()),
          static_cast<std::size_t>(std::max(lo, hi) - samples_.begin())};
}

VectorSeries differentiate(std::span<const StampedVec3> positions, double max_gap) {
  if (positions.size() < 2) {
    throw TooFewSamples("differentiation needs at least two samples");
  }
  VectorSeries out;
  out.reserve(positions.size());
  std::size_t seg_begin = 0;
  const std::size_t n = positions.size();
  while (seg_begin < n) {
    std::size_t seg_end = seg_begin + 1;
    while (seg_end < n && positions[seg_end].stamp - positions[seg_end - 1].stamp <= max_gap) {
      ++seg_end;
    }
    const std::size_t len = seg_end - seg_begin;
    for (std::size_t i = seg_begin; len >= 2 && i < seg_end; ++i) {
      const bool first = i == seg_begin;
      const bool last = i + 1 == seg_end;
      if (len >= 3 && (first || last)) {
        // Second-order one-sided stencil through the two nearest neighbours.
        const long step = first ? 1 : -1;
        const StampedVec3& p0 = positions[i];
        const StampedVec3& p1 = positions[i + step];
        const StampedVec3& p2 = positions[i + 2 * step];
        const double h1 = p1.stamp - p0.stamp;
        const double h2 = p2.stamp - p0.stamp;
        const Vec3 v = -(h1 + h2) / (h1 * h2) * p0.value + h2 / (h1 * (h2 - h1)) * p1.value -
                       h1 / (h2 * (h2 - h1)) * p2.value;
        out.push_back({p0.stamp, v});
        continue;
      }
      const std::size_t lo = first ? i : i - 1;
      const std::size_t hi = last ? i : i + 1;
      const double dt = positions[hi].stamp - positions[lo].stamp;
      out.push_back({positions[i].stamp, (positions[hi].value - positions[lo].value) / dt});
    }
    seg_begin = seg_end;
  }
  return out;
}

VectorSeries differentiatePositions(const SensorStream& stream) {
  if (stream.modality() == Modality::Imu) {
    throw std::invalid_argument("differentiatePositions: IMU stream has no positions");
  }
  std::vector<StampedVec3> positions;
  positions.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    positions.push_back({stream[i].stamp, stream.position(i)});
  }
  return differentiate(positions);
}

std::optional<Vec3> interpolate(const VectorSeries& series, double stamp, double max_gap) {
  if (series.empty() || stamp < series.front().stamp || stamp > series.back().stamp) {
    return std::nullopt;
  }
  auto it = std::lower_bound(series.begin(), series.end(), stamp,
                             [](const StampedVec3& s, double t) { return s.stamp < t; });
  if (it->stamp == stamp) return it->value;
  const StampedVec3& hi = *it;
  const StampedVec3& lo = *(it - 1);
  if (hi.stamp - lo.stamp > max_gap) return std::nullopt;
  const double s = (stamp - lo.stamp) / (hi.stamp - lo.stamp);
  return ((1.0 - s) * lo.value + s * hi.value).eval();
}

std::optional<VelocityWindow> extractWindow(const VectorSeries& a, const VectorSeries& b,
                                            double t_end, double duration, double max_gap) {
  const double t_begin = t_end - duration;
  auto first = std::lower_bound(a.begin(), a.end(), t_begin,
                                [](const StampedVec3& s, double t) { return s.stamp < t; });
  VelocityWindow w;
  w.duration = duration;
  std::size_t candidates = 0;
  for (auto it = first; it != a.end() && it->stamp <= t_end; ++it) {
    ++candidates;
    const auto bv = interpolate(b, it->stamp, max_gap);
    if (!bv) continue;
    w.stamps.push_back(it->stamp);
    for (int k = 0; k < 3; ++k) {
      w.a[k].push_back(it->value[k]);
      w.b[k].push_back((*bv)[k]);
    }
  }
  if (w.size() < 2 || 2 * w.size() < candidates) return std::nullopt;
  return w;
}

VelocityWindow standardize(const VelocityWindow& window, double scale_floor) {
  constexpr double kEps = 1e-9;
  VelocityWindow out = window;
  const std::size_t n = window.size();
  if (n == 0) return out;
  for (int k = 0; k < 3; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += window.a[k][i] + window.b[k][i];
    const double mean = sum / static_cast<double>(2 * n);
    double half_range = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      half_range = std::max({half_range, std::abs(window.a[k][i] - mean),
                             std::abs(window.b[k][i] - mean)});
    }
    const double scale = std::max(half_range, scale_floor);
    const double inv = scale < kEps ? 1.0 : 1.0 / scale;
    for (std::size_t i = 0; i < n; ++i) {
      out.a[k][i] = (window.a[k][i] - mean) * inv;
      out.b[k][i] = (window.b[k][i] - mean) * inv;
    }
  }
  return out;
}

void writeStreamsCsv(std::ostream& out, std::span<const SensorStream> streams) {
  constexpr int kPrec = 17;
  for (const auto& s : streams) {
    const auto& e = s.extrinsic();
    out << "# sensor," << s.id() << ',' << toString(s.modality()) << ','
        << csv::num(s.rate(), kPrec);
    for (double v : {e.translation.x(), e.translation.y(), e.translation.z(),
                     e.rotation.w(), e.rotation.x(), e.rotation.y(), e.rotation.z()}) {
      out << ',' << csv::num(v, kPrec);
    }
    out << '\n';
  }
  out << "stamp,sensor_id,modality,p0,p1,p2,p3,p4,p5,p6\n";
  for (const auto& s : streams) {
    for (const auto& sample : s.samples()) {
      std::vector<double> values;
      if (const auto* pose = std::get_if<RigidTransform>(&sample.payload)) {
        values = {pose->translation.x(), pose->translation.y(), pose->translation.z(),
                  pose->rotation.w(),    pose->rotation.x(),    pose->rotation.y(),
                  pose->rotation.z()};
      } else if (const auto* pos = std::get_if<Vec3>(&sample.payload)) {
        values = {pos->x(), pos->y(), pos->z()};
      } else {
        const auto& imu = std::get<ImuReading>(sample.payload);
        values = {imu.accel.x(), imu.accel.y(), imu.accel.z(),
                  imu.gyro.x(),  imu.gyro.y(),  imu.gyro.z()};
      }
      out << csv::num(sample.stamp, kPrec) << ',' << s.id() << ',' << toString(s.modality());
      for (std::size_t i = 0; i < 7; ++i) {
        out << ',';
        if (i < values.size()) out << csv::num(values[i], kPrec);
      }
      out << '\n';
    }
  }
}

std::vector<SensorStream> readStreamsCsv(std::istream& in) {
  std::vector<SensorStream> streams;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::vector<TimedSample>> samples;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# sensor,", 0) == 0) {
      const auto cells = csv::split(std::string_view(line).substr(2));
      if (cells.size() != 11) throw std::invalid_argument("malformed sensor metadata line");
      std::vector<double> v;
      for (std::size_t i = 3; i < cells.size(); ++i) v.push_back(csv::parseDouble(cells[i], "metadata"));
      RigidTransform extrinsic(UnitQuaternion(v[4], v[5], v[6], v[7]), Vec3(v[1], v[2], v[3]));
      index[cells[1]] = streams.size();
      streams.emplace_back(cells[1], modalityFromString(cells[2]), v[0], extrinsic);
      continue;
    }
    if (line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("stamp,sensor_id,modality", 0) != 0) {
        throw std::invalid_argument("missing stream CSV header");
      }
      header_seen = true;
      continue;
    }
    const auto cells = csv::split(line);
    if (cells.size() != 10) throw std::invalid_argument("stream row must have 10 columns");
    auto it = index.find(cells[1]);
    if (it == index.end()) throw std::invalid_argument("row for undeclared sensor '" + cells[1] + "'");
    const Modality modality = modalityFromString(cells[2]);
    auto value = [&](std::size_t i) { return csv::parseDouble(cells[3 + i], "payload"); };
    TimedSample sample;
    sample.stamp = csv::parseDouble(cells[0], "stamp");
    switch (modality) {
      case Modality::Pose:
        sample.payload = RigidTransform(UnitQuaternion(value(3), value(4), value(5), value(6)),
                                        Vec3(value(0), value(1), value(2)));
        break;
      case Modality::Position:
        sample.payload = Vec3(value(0), value(1), value(2));
        break;
      case Modality::Imu:
        sample.payload = ImuReading{Vec3(value(0), value(1), value(2)),
                                    Vec3(value(3), value(4), value(5))};
        break;
    }
    samples[cells[1]].push_back(std::move(sample));
  }
  for (auto& s : streams) {
    s = s.withSamples(std::move(samples[s.id()]));
  }
  return streams;
}

}  // namespace mfuse
