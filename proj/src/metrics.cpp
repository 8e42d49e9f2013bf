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

#include "mfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mfuse {

namespace {

constexpr double kKlFloor = 1e-12;
constexpr double kMinBandwidth = 1e-3;
// Extra history pulled in before the window so that central differences and
// interpolation near the window start see both neighbours.
constexpr double kHistoryMargin = 0.2;

bool isConstant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

double correlation(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> kdeOnGrid(std::span<const double> samples, double h,
                              const std::vector<double>& grid) {
  std::vector<double> density(grid.size(), 0.0);
  const double inv2h2 = 1.0 / (2.0 * h * h);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double s : samples) {
      const double d = grid[g] - s;
      acc += std::exp(-d * d * inv2h2);
    }
    density[g] = acc;
  }
  const double total = std::accumulate(density.begin(), density.end(), 0.0);
  if (total > 0.0) {
    for (double& d : density) d /= total;
  }
  return density;
}

// Orientation of a pose stream at an arbitrary stamp, by slerp between the
// bracketing samples.
std::optional<UnitQuaternion> poseOrientationAt(const SensorStream& stream, double stamp,
                                                double max_gap) {
  const auto& samples = stream.samples();
  if (samples.empty() || stamp < samples.front().stamp || stamp > samples.back().stamp) {
    return std::nullopt;
  }
  auto it = std::lower_bound(samples.begin(), samples.end(), stamp,
                             [](const TimedSample& s, double t) { return s.stamp < t; });
  const std::size_t hi = static_cast<std::size_t>(it - samples.begin());
  if (samples[hi].stamp == stamp) return stream.pose(hi).rotation;
  const std::size_t lo = hi - 1;
  const double span = samples[hi].stamp - samples[lo].stamp;
  if (span > max_gap) return std::nullopt;
  return slerp(stream.pose(lo).rotation, stream.pose(hi).rotation,
               (stamp - samples[lo].stamp) / span);
}

}  // namespace

std::string_view toString(MetricKind kind) {
  switch (kind) {
    case MetricKind::MAE:
      return "mae";
    case MetricKind::PCC:
      return "pcc";
    case MetricKind::KL:
      return "kl";
    case MetricKind::CM:
      return "cm";
  }
  return "cm";
}

MetricKind metricFromString(std::string_view name) {
  if (name == "mae" || name == "MAE") return MetricKind::MAE;
  if (name == "pcc" || name == "PCC") return MetricKind::PCC;
  if (name == "kl" || name == "KL") return MetricKind::KL;
  if (name == "cm" || name == "CM") return MetricKind::CM;
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

void MetricConfig::validate() const {
  if (!(window > 0.0)) throw std::invalid_argument("metric window must be positive");
  if (kde_bandwidth && !(*kde_bandwidth > 0.0)) {
    throw std::invalid_argument("KDE bandwidth must be positive");
  }
  if (kde_grid_points < 2) throw std::invalid_argument("KDE grid needs at least two points");
  if (scale_floor < 0.0) throw std::invalid_argument("scale floor must be non-negative");
  if (!(max_gap > 0.0)) throw std::invalid_argument("max gap must be positive");
}

Vec3 transportVelocity(const Vec3& v_b, const Vec3& omega_b, const Vec3& r_ba,
                       const UnitQuaternion& q_Aa, const UnitQuaternion& q_AB,
                       const UnitQuaternion& q_Bb) {
  return (q_Aa.inverse() * q_AB * q_Bb) * (v_b + omega_b.cross(r_ba));
}

double mae(const VelocityWindow& window) {
  const std::size_t n = window.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(window.a[k][i] - window.b[k][i]);
    total += acc / static_cast<double>(n);
  }
  return total;
}

Vec3 pcc(const VelocityWindow& window) {
  if (window.size() < 2) throw DegenerateVariance("correlation needs at least two samples");
  Vec3 rho;
  for (int k = 0; k < 3; ++k) {
    if (isConstant(window.a[k]) || isConstant(window.b[k])) {
      throw DegenerateVariance("constant sequence on axis " + std::to_string(k));
    }
    rho[k] = correlation(window.a[k], window.b[k]);
  }
  return rho;
}

double silvermanBandwidth(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  if (samples.size() < 2) return kMinBandwidth;
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double sigma = std::sqrt(ss / (n - 1.0));
  return std::max(1.06 * sigma * std::pow(n, -0.2), kMinBandwidth);
}

double klDivergence(std::span<const double> p, std::span<const double> q,
                    const MetricConfig& cfg) {
  if (p.size() < 2 || q.size() < 2) {
    throw std::invalid_argument("KL divergence needs at least two samples per side");
  }
  const double hp = cfg.kde_bandwidth ? *cfg.kde_bandwidth : silvermanBandwidth(p);
  const double hq = cfg.kde_bandwidth ? *cfg.kde_bandwidth : silvermanBandwidth(q);
  const auto [pmin, pmax] = std::minmax_element(p.begin(), p.end());
  const auto [qmin, qmax] = std::minmax_element(q.begin(), q.end());
  const double pad = 3.0 * std::max(hp, hq);
  const double lo = std::min(*pmin, *qmin) - pad;
  const double hi = std::max(*pmax, *qmax) + pad;
  const int m = cfg.kde_grid_points;
  std::vector<double> grid(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) grid[i] = lo + (hi - lo) * i / (m - 1);
  const auto P = kdeOnGrid(p, hp, grid);
  const auto Q = kdeOnGrid(q, hq, grid);
  double kl = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (P[i] <= 0.0) continue;
    kl += P[i] * std::log(P[i] / std::max(Q[i], kKlFloor));
  }
  return std::max(kl, 0.0);
}

double cramerDistance(std::span<const double> p, std::span<const double> q) {
  if (p.empty() || q.empty()) {
    throw std::invalid_argument("Cramer distance needs non-empty samples");
  }
  std::vector<double> a(p.begin(), p.end());
  std::vector<double> b(q.begin(), q.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double x = std::min(a.front(), b.front());
  double integral = 0.0;
  while (i < a.size() || j < b.size()) {
    const double next = (j == b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    const double diff = static_cast<double>(i) / na - static_cast<double>(j) / nb;
    integral += diff * diff * (next - x);
    x = next;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return std::sqrt(2.0 * integral);
}

double windowDistance(const VelocityWindow& window, MetricKind kind, const MetricConfig& cfg) {
  if (kind == MetricKind::MAE) return mae(window);
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    const auto& a = window.a[k];
    const auto& b = window.b[k];
    switch (kind) {
      case MetricKind::PCC: {
        const bool ca = isConstant(a);
        const bool cb = isConstant(b);
        if (ca && cb) {
          total += (a.front() == b.front()) ? 0.0 : 1.0;
        } else if (ca || cb) {
          total += 1.0;
        } else {
          total += 1.0 - correlation(a, b);
        }
        break;
      }
      case MetricKind::KL:
        total += klDivergence(a, b, cfg);
        break;
      case MetricKind::CM:
        total += cramerDistance(a, b);
        break;
      case MetricKind::MAE:
        break;
    }
  }
  return total;
}

VectorSeries mountBodyVelocity(const SensorTrack& track, const LocalSeries& local, double t0,
                               double t1, double max_gap) {
  const SensorStream& stream = *track.stream;
  const double margin = stream.rate() > 0.0 ? 2.0 / stream.rate() : 0.0;
  const auto [first, last] = stream.indexRange(t0 - margin, t1);
  if (last - first < 2) return {};
  std::vector<StampedVec3> positions;
  positions.reserve(last - first);
  for (std::size_t i = first; i < last; ++i) positions.push_back({stream[i].stamp, stream.position(i)});
  const VectorSeries world_velocity = differentiate(positions, max_gap);

  VectorSeries out;
  out.reserve(world_velocity.size());
  std::size_t cursor = first;
  const UnitQuaternion& q_Is = stream.extrinsic().rotation;
  for (const auto& v : world_velocity) {
    if (v.stamp < t0) continue;
    UnitQuaternion q_Ss;
    if (stream.modality() == Modality::Pose) {
      while (stream[cursor].stamp < v.stamp) ++cursor;
      q_Ss = stream.pose(cursor).rotation;
    } else {
      const auto ls = interpolate(local, v.stamp);
      if (!ls) continue;
      q_Ss = track.q_SL * ls->state.q_LI * q_Is;
    }
    out.push_back({v.stamp, q_Ss.inverse() * v.value});
  }
  return out;
}

VectorSeries localMountVelocity(const LocalSeries& local, const RigidTransform& extrinsic,
                                double t0, double t1) {
  auto first = std::lower_bound(local.begin(), local.end(), t0,
                                [](const LocalSample& s, double t) { return s.state.stamp < t; });
  VectorSeries out;
  const UnitQuaternion q_sI = extrinsic.rotation.inverse();
  for (auto it = first; it != local.end() && it->state.stamp <= t1; ++it) {
    const Vec3 v = it->state.v_I + it->omega_I.cross(extrinsic.translation);
    out.push_back({it->state.stamp, q_sI * v});
  }
  return out;
}

ConsistencyEvaluator::ConsistencyEvaluator(std::vector<SensorTrack> tracks,
                                           const LocalSeries& local, double t,
                                           const MetricConfig& cfg)
    : tracks_(std::move(tracks)), local_(local), t_(t), cfg_(cfg) {
  cfg_.validate();
  t0_ = t_ - cfg_.window - kHistoryMargin;
  body_velocity_.reserve(tracks_.size());
  for (const auto& track : tracks_) {
    if (track.stream == nullptr || track.stream->modality() == Modality::Imu) {
      throw std::invalid_argument("consistency tracks must be pose or position streams");
    }
    body_velocity_.push_back(mountBodyVelocity(track, local_, t0_, t_, cfg_.max_gap));
    // A stream that went silent reads as a dropout even while older
    // samples still cover part of the window.
    const auto& v = body_velocity_.back();
    const auto [first, last] = track.stream->indexRange(t0_, t_);
    if (last == first || (*track.stream)[last - 1].stamp < t_ - cfg_.max_gap ||
        (!v.empty() && v.back().stamp < t_ - cfg_.max_gap)) {
      body_velocity_.back().clear();
    }
  }
}

std::optional<UnitQuaternion> ConsistencyEvaluator::mountOrientation(std::size_t i,
                                                                     double stamp) const {
  const SensorTrack& track = tracks_[i];
  if (track.stream->modality() == Modality::Pose) {
    return poseOrientationAt(*track.stream, stamp, cfg_.max_gap);
  }
  const auto ls = interpolate(local_, stamp);
  if (!ls) return std::nullopt;
  return track.q_SL * ls->state.q_LI * track.stream->extrinsic().rotation;
}

VectorSeries ConsistencyEvaluator::transported(std::size_t a, std::size_t b) const {
  const UnitQuaternion q_AB = tracks_[a].q_SL * tracks_[b].q_SL.inverse();
  const RigidTransform& T_Ia = tracks_[a].stream->extrinsic();
  const RigidTransform& T_Ib = tracks_[b].stream->extrinsic();
  const UnitQuaternion q_bI = T_Ib.rotation.inverse();
  const Vec3 r_ba = q_bI * (T_Ia.translation - T_Ib.translation);
  VectorSeries out;
  out.reserve(body_velocity_[b].size());
  for (const auto& v : body_velocity_[b]) {
    const auto q_Aa = mountOrientation(a, v.stamp);
    const auto q_Bb = mountOrientation(b, v.stamp);
    const auto ls = interpolate(local_, v.stamp);
    if (!q_Aa || !q_Bb || !ls) continue;
    const Vec3 omega_b = q_bI * ls->omega_I;
    out.push_back({v.stamp, transportVelocity(v.value, omega_b, r_ba, *q_Aa, q_AB, *q_Bb)});
  }
  return out;
}

std::optional<VelocityWindow> ConsistencyEvaluator::pairWindow(std::size_t a,
                                                               std::size_t b) const {
  auto w = extractWindow(body_velocity_[a], transported(a, b), t_, cfg_.window, cfg_.max_gap);
  if (!w) return std::nullopt;
  return standardize(*w, cfg_.scale_floor);
}

std::optional<VelocityWindow> ConsistencyEvaluator::localWindow(std::size_t a) const {
  const VectorSeries reference =
      localMountVelocity(local_, tracks_[a].stream->extrinsic(), t0_, t_);
  auto w = extractWindow(body_velocity_[a], reference, t_, cfg_.window, cfg_.max_gap);
  if (!w) return std::nullopt;
  return standardize(*w, cfg_.scale_floor);
}

ConsistencyValue ConsistencyEvaluator::pair(std::size_t a, std::size_t b,
                                            MetricKind kind) const {
  const auto w = pairWindow(a, b);
  if (!w) return std::nullopt;
  return windowDistance(*w, kind, cfg_);
}

ConsistencyValue ConsistencyEvaluator::againstLocal(std::size_t a, MetricKind kind) const {
  const auto w = localWindow(a);
  if (!w) return std::nullopt;
  return windowDistance(*w, kind, cfg_);
}

ConsistencyValue consistency(const SensorTrack& a, const SensorTrack& b, const LocalSeries& local,
                             double t, const MetricConfig& cfg) {
  ConsistencyEvaluator eval({a, b}, local, t, cfg);
  return eval.pair(0, 1);
}

}  // namespace mfuse
