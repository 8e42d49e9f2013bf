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

#include "mfuse/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mfuse {

namespace {

using Json = nlohmann::ordered_json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Smooth {
  double s, ds, dds;
};

// Quintic smoothstep and its derivatives with respect to u.
Smooth smoothstep(double u) {
  if (u <= 0.0) return {0.0, 0.0, 0.0};
  if (u >= 1.0) return {1.0, 0.0, 0.0};
  const double u2 = u * u;
  const double u3 = u2 * u;
  return {10.0 * u3 - 15.0 * u3 * u + 6.0 * u3 * u2, 30.0 * u2 - 60.0 * u3 + 30.0 * u2 * u2,
          60.0 * u - 180.0 * u2 + 120.0 * u3};
}

// Value, first and second derivative of an axis profile.
Vec3 evalAxis(const AxisProfile& axis, double t) {
  Vec3 out(axis.offset, 0.0, 0.0);
  for (const auto& r : axis.ramps) {
    const Smooth s = smoothstep((t - r.start) / r.duration);
    out += r.amplitude * Vec3(s.s, s.ds / r.duration, s.dds / (r.duration * r.duration));
  }
  for (const auto& sn : axis.sines) {
    const double tau = t - sn.start;
    double R = 1.0;
    double dR = 0.0;
    double ddR = 0.0;
    if (sn.ramp > 0.0) {
      const Smooth s = smoothstep(tau / sn.ramp);
      R = s.s;
      dR = s.ds / sn.ramp;
      ddR = s.dds / (sn.ramp * sn.ramp);
    }
    const double w = kTwoPi * sn.frequency;
    const double th = w * tau + sn.phase;
    const double sv = std::sin(th);
    const double cv = std::cos(th);
    out += sn.amplitude *
           Vec3(R * sv, dR * sv + R * w * cv, ddR * sv + 2.0 * dR * w * cv - R * w * w * sv);
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Vec3 gaussian3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double a = n(rng);
  const double b = n(rng);
  const double c = n(rng);
  return {a, b, c};
}

bool inWindow(double t, const CorruptionEvent& e) { return t >= e.start && t <= e.end; }

// ---- JSON helpers ---------------------------------------------------------

Json vecToJson(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vecFromJson(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ScenarioError(std::string(what) + " must be an array of three numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json transformToJson(const RigidTransform& T) {
  const auto& q = T.rotation;
  return Json{{"translation", vecToJson(T.translation)},
              {"quaternion", Json::array({q.w(), q.x(), q.y(), q.z()})}};
}

RigidTransform transformFromJson(const Json& j) {
  RigidTransform T;
  if (j.contains("translation")) T.translation = vecFromJson(j["translation"], "translation");
  if (j.contains("quaternion")) {
    const auto& q = j["quaternion"];
    if (!q.is_array() || q.size() != 4) throw ScenarioError("quaternion must have four numbers");
    T.rotation = UnitQuaternion(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                q[3].get<double>());
  } else if (j.contains("rpy_deg")) {
    const Vec3 rpy = vecFromJson(j["rpy_deg"], "rpy_deg");
    T.rotation = UnitQuaternion::fromRollPitchYaw(degToRad(rpy.x()), degToRad(rpy.y()),
                                                  degToRad(rpy.z()));
  }
  return T;
}

Json axisToJson(const AxisProfile& a) {
  Json ramps = Json::array();
  for (const auto& r : a.ramps) {
    ramps.push_back({{"amplitude", r.amplitude}, {"start", r.start}, {"duration", r.duration}});
  }
  Json sines = Json::array();
  for (const auto& s : a.sines) {
    sines.push_back({{"amplitude", s.amplitude},
                     {"frequency", s.frequency},
                     {"phase", s.phase},
                     {"start", s.start},
                     {"ramp", s.ramp}});
  }
  return Json{{"offset", a.offset}, {"ramps", ramps}, {"sines", sines}};
}

AxisProfile axisFromJson(const Json& j) {
  AxisProfile a;
  a.offset = j.value("offset", 0.0);
  for (const auto& r : j.value("ramps", Json::array())) {
    a.ramps.push_back({r.at("amplitude").get<double>(), r.value("start", 0.0),
                       r.value("duration", 1.0)});
  }
  for (const auto& s : j.value("sines", Json::array())) {
    a.sines.push_back({s.at("amplitude").get<double>(), s.at("frequency").get<double>(),
                       s.value("phase", 0.0), s.value("start", 0.0), s.value("ramp", 0.0)});
  }
  return a;
}

}  // namespace

// ---- Trajectory ----------------------------------------------------------

Trajectory::Trajectory(TrajectorySpec spec) : spec_(std::move(spec)) {
  if (!(spec_.duration > 0.0)) throw ScenarioError("trajectory duration must be positive");
  for (const AxisProfile* a : {&spec_.x, &spec_.y, &spec_.z, &spec_.yaw}) {
    for (const auto& r : a->ramps) {
      if (!(r.duration > 0.0)) throw ScenarioError("ramp duration must be positive");
    }
    for (const auto& s : a->sines) {
      if (s.ramp < 0.0) throw ScenarioError("sine ramp must be non-negative");
    }
  }
}

Vec3 Trajectory::position(double t) const {
  return {evalAxis(spec_.x, t)[0], evalAxis(spec_.y, t)[0], evalAxis(spec_.z, t)[0]};
}

Vec3 Trajectory::velocity(double t) const {
  return {evalAxis(spec_.x, t)[1], evalAxis(spec_.y, t)[1], evalAxis(spec_.z, t)[1]};
}

Vec3 Trajectory::acceleration(double t) const {
  return {evalAxis(spec_.x, t)[2], evalAxis(spec_.y, t)[2], evalAxis(spec_.z, t)[2]};
}

double Trajectory::yaw(double t) const { return evalAxis(spec_.yaw, t)[0]; }
double Trajectory::yawRate(double t) const { return evalAxis(spec_.yaw, t)[1]; }
UnitQuaternion Trajectory::orientation(double t) const { return UnitQuaternion::rotZ(yaw(t)); }
Vec3 Trajectory::angularVelocity(double t) const { return {0.0, 0.0, yawRate(t)}; }

NavState Trajectory::state(double t) const {
  NavState s;
  s.stamp = t;
  s.q_LI = orientation(t);
  s.p_LI = position(t);
  s.v_I = s.q_LI.inverse() * velocity(t);
  return s;
}

// ---- Scenario ------------------------------------------------------------

std::string_view toString(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::Misalign:
      return "misalign";
    case CorruptionKind::Noise:
      return "noise";
    case CorruptionKind::Drift:
      return "drift";
    case CorruptionKind::Dropout:
      return "dropout";
  }
  return "dropout";
}

CorruptionKind corruptionFromString(std::string_view name) {
  if (name == "misalign") return CorruptionKind::Misalign;
  if (name == "noise") return CorruptionKind::Noise;
  if (name == "drift") return CorruptionKind::Drift;
  if (name == "dropout") return CorruptionKind::Dropout;
  throw ScenarioError("unknown corruption kind: " + std::string(name));
}

void Scenario::validate() const {
  if (!(imu.rate > 0.0)) throw ScenarioError("IMU rate must be positive");
  if (sensors.empty()) throw ScenarioError("scenario needs at least one sensor");
  std::set<std::string> ids;
  for (const auto& s : sensors) {
    if (s.id.empty() || s.id == "LOCAL" || s.id.find_first_of(",;\n") != std::string::npos) {
      throw ScenarioError("invalid sensor id '" + s.id + "'");
    }
    if (!ids.insert(s.id).second) throw ScenarioError("duplicate sensor id " + s.id);
    if (s.modality == Modality::Imu) throw ScenarioError("sensor " + s.id + " cannot be an IMU");
    if (!(s.rate > 0.0)) throw ScenarioError("sensor " + s.id + " needs a positive rate");
    const double ratio = imu.rate / s.rate;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
      throw ScenarioError("sensor " + s.id + " rate must divide the IMU rate");
    }
    const double start_ticks = s.start * s.rate;
    if (s.start < 0.0 || std::abs(start_ticks - std::round(start_ticks)) > 1e-9) {
      throw ScenarioError("sensor " + s.id + " start must be a multiple of its period");
    }
    if (!(s.noise.position_sigma > 0.0) ||
        (s.modality == Modality::Pose && !(s.noise.rotation_sigma > 0.0))) {
      throw ScenarioError("sensor " + s.id + " needs positive noise levels");
    }
    if (s.drift_sigma < 0.0) throw ScenarioError("sensor " + s.id + " drift must be non-negative");
  }
  for (std::size_t i = 0; i < corruptions.size(); ++i) {
    const auto& e = corruptions[i];
    if (!ids.count(e.sensor)) throw ScenarioError("corruption targets unknown sensor " + e.sensor);
    if (!(e.end >= e.start)) throw ScenarioError("corruption window end precedes its start");
    if (e.kind == CorruptionKind::Noise && (e.white_sigma < 0.0 || e.brown_sigma < 0.0)) {
      throw ScenarioError("noise levels must be non-negative");
    }
    if (e.kind == CorruptionKind::Drift && !(e.axis.norm() > 0.0)) {
      throw ScenarioError("drift axis must be non-zero");
    }
    for (std::size_t j = 0; j < i; ++j) {
      const auto& o = corruptions[j];
      if (o.sensor == e.sensor && o.kind == e.kind && o.start <= e.end && e.start <= o.end) {
        throw ScenarioError("overlapping " + std::string(toString(e.kind)) + " events on " +
                            e.sensor);
      }
    }
  }
  pipeline.metric.validate();
  pipeline.consensus.validate();
  if (!(pipeline.decision_rate > 0.0)) throw ScenarioError("decision rate must be positive");
}

const SensorSpec& Scenario::sensor(std::string_view id) const {
  for (const auto& s : sensors) {
    if (s.id == id) return s;
  }
  throw ScenarioError("unknown sensor " + std::string(id));
}

RigidTransform Scenario::frameAt(std::string_view id, double t) const {
  RigidTransform frame = sensor(id).frame;
  for (const auto& e : corruptions) {
    if (e.sensor == id && e.kind == CorruptionKind::Misalign && inWindow(t, e)) {
      frame = RigidTransform(e.misalignment(), Vec3::Zero()) * frame;
    }
  }
  return frame;
}

Scenario parseScenario(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("malformed scenario: ") + e.what());
  }
  try {
    Scenario s;
    s.name = j.value("name", std::string("scenario"));
    s.seed = j.value("seed", std::uint64_t{1});
    const Json& tj = j.at("trajectory");
    s.trajectory.duration = tj.at("duration").get<double>();
    if (tj.contains("x")) s.trajectory.x = axisFromJson(tj["x"]);
    if (tj.contains("y")) s.trajectory.y = axisFromJson(tj["y"]);
    if (tj.contains("z")) s.trajectory.z = axisFromJson(tj["z"]);
    if (tj.contains("yaw")) s.trajectory.yaw = axisFromJson(tj["yaw"]);

    const Json ij = j.value("imu", Json::object());
    s.imu.rate = ij.value("rate", 200.0);
    s.imu.noise.accel_sigma = ij.value("accel_sigma", s.imu.noise.accel_sigma);
    s.imu.noise.gyro_sigma = ij.value("gyro_sigma", s.imu.noise.gyro_sigma);
    s.imu.noise.accel_bias_rw = ij.value("accel_bias_rw", s.imu.noise.accel_bias_rw);
    s.imu.noise.gyro_bias_rw = ij.value("gyro_bias_rw", s.imu.noise.gyro_bias_rw);
    if (ij.contains("accel_bias")) s.imu.accel_bias = vecFromJson(ij["accel_bias"], "accel_bias");
    if (ij.contains("gyro_bias")) s.imu.gyro_bias = vecFromJson(ij["gyro_bias"], "gyro_bias");

    for (const auto& sj : j.at("sensors")) {
      SensorSpec spec;
      spec.id = sj.at("id").get<std::string>();
      spec.modality = modalityFromString(sj.at("modality").get<std::string>());
      spec.rate = sj.at("rate").get<double>();
      spec.start = sj.value("start", 0.0);
      spec.noise.position_sigma = sj.value("position_sigma", spec.noise.position_sigma);
      spec.noise.rotation_sigma = sj.value("rotation_sigma", spec.noise.rotation_sigma);
      spec.drift_sigma = sj.value("drift_sigma", spec.drift_sigma);
      if (sj.contains("extrinsic")) spec.extrinsic = transformFromJson(sj["extrinsic"]);
      if (sj.contains("frame")) spec.frame = transformFromJson(sj["frame"]);
      s.sensors.push_back(std::move(spec));
    }
    for (const auto& cj : j.value("corruptions", Json::array())) {
      CorruptionEvent e;
      e.sensor = cj.at("sensor").get<std::string>();
      e.kind = corruptionFromString(cj.at("kind").get<std::string>());
      e.start = cj.at("start").get<double>();
      e.end = cj.at("end").get<double>();
      e.roll = degToRad(cj.value("roll_deg", 0.0));
      e.pitch = degToRad(cj.value("pitch_deg", 0.0));
      e.yaw = degToRad(cj.value("yaw_deg", 0.0));
      e.white_sigma = cj.value("white_sigma", e.white_sigma);
      e.brown_sigma = cj.value("brown_sigma", e.brown_sigma);
      e.v0 = cj.value("v0", e.v0);
      e.lambda = cj.value("lambda", e.lambda);
      if (cj.contains("axis")) e.axis = vecFromJson(cj["axis"], "axis");
      s.corruptions.push_back(std::move(e));
    }

    const Json pj = j.value("pipeline", Json::object());
    PipelineSettings& p = s.pipeline;
    const Json mj = pj.value("metric", Json::object());
    p.metric.window = mj.value("window", p.metric.window);
    p.metric.metric = metricFromString(mj.value("kind", std::string(toString(p.metric.metric))));
    p.metric.scale_floor = mj.value("scale_floor", p.metric.scale_floor);
    p.metric.max_gap = mj.value("max_gap", p.metric.max_gap);
    p.metric.kde_grid_points = mj.value("kde_grid_points", p.metric.kde_grid_points);
    if (mj.contains("kde_bandwidth") && !mj["kde_bandwidth"].is_null()) {
      p.metric.kde_bandwidth = mj["kde_bandwidth"].get<double>();
    }
    const Json cj = pj.value("consensus", Json::object());
    p.consensus.threshold = cj.value("threshold", p.consensus.threshold);
    p.consensus.hold_time = cj.value("hold_time", p.consensus.hold_time);
    p.decision_rate = pj.value("decision_rate", p.decision_rate);
    const Json lj = pj.value("local", Json::object());
    p.local.lag = lj.value("lag", p.local.lag);
    p.local.optimize_rate = lj.value("optimize_rate", p.local.optimize_rate);
    p.local.keyframe_gap = lj.value("keyframe_gap", p.local.keyframe_gap);
    const Json xj = pj.value("transform", Json::object());
    p.transform.window = xj.value("window", p.transform.window);
    p.transform.rate = xj.value("rate", p.transform.rate);
    p.transform.observability_spread =
        xj.value("observability_spread", p.transform.observability_spread);
    p.local.imu_rate = s.imu.rate;
    p.local.imu_noise = s.imu.noise;
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("invalid scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(std::string("invalid scenario: ") + e.what());
  }
}

Scenario loadScenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parseScenario(buf.str());
}

std::string dumpScenario(const Scenario& s) {
  Json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["trajectory"] = {{"duration", s.trajectory.duration},
                     {"x", axisToJson(s.trajectory.x)},
                     {"y", axisToJson(s.trajectory.y)},
                     {"z", axisToJson(s.trajectory.z)},
                     {"yaw", axisToJson(s.trajectory.yaw)}};
  j["imu"] = {{"rate", s.imu.rate},
              {"accel_sigma", s.imu.noise.accel_sigma},
              {"gyro_sigma", s.imu.noise.gyro_sigma},
              {"accel_bias_rw", s.imu.noise.accel_bias_rw},
              {"gyro_bias_rw", s.imu.noise.gyro_bias_rw},
              {"accel_bias", vecToJson(s.imu.accel_bias)},
              {"gyro_bias", vecToJson(s.imu.gyro_bias)}};
  Json sensors = Json::array();
  for (const auto& sp : s.sensors) {
    Json sj{{"id", sp.id},
            {"modality", std::string(toString(sp.modality))},
            {"rate", sp.rate},
            {"start", sp.start},
            {"position_sigma", sp.noise.position_sigma}};
    if (sp.modality == Modality::Pose) sj["rotation_sigma"] = sp.noise.rotation_sigma;
    sj["drift_sigma"] = sp.drift_sigma;
    sj["extrinsic"] = transformToJson(sp.extrinsic);
    sj["frame"] = transformToJson(sp.frame);
    sensors.push_back(std::move(sj));
  }
  j["sensors"] = sensors;
  Json events = Json::array();
  for (const auto& e : s.corruptions) {
    Json ej{{"sensor", e.sensor},
            {"kind", std::string(toString(e.kind))},
            {"start", e.start},
            {"end", e.end}};
    switch (e.kind) {
      case CorruptionKind::Misalign:
        ej["roll_deg"] = radToDeg(e.roll);
        ej["pitch_deg"] = radToDeg(e.pitch);
        ej["yaw_deg"] = radToDeg(e.yaw);
        break;
      case CorruptionKind::Noise:
        ej["white_sigma"] = e.white_sigma;
        ej["brown_sigma"] = e.brown_sigma;
        break;
      case CorruptionKind::Drift:
        ej["v0"] = e.v0;
        ej["lambda"] = e.lambda;
        ej["axis"] = vecToJson(e.axis);
        break;
      case CorruptionKind::Dropout:
        break;
    }
    events.push_back(std::move(ej));
  }
  j["corruptions"] = events;
  const PipelineSettings& p = s.pipeline;
  Json metric{{"window", p.metric.window},
              {"kind", std::string(toString(p.metric.metric))},
              {"scale_floor", p.metric.scale_floor},
              {"max_gap", p.metric.max_gap},
              {"kde_grid_points", p.metric.kde_grid_points}};
  metric["kde_bandwidth"] = p.metric.kde_bandwidth ? Json(*p.metric.kde_bandwidth) : Json(nullptr);
  j["pipeline"] = {{"metric", metric},
                   {"consensus",
                    {{"threshold", p.consensus.threshold}, {"hold_time", p.consensus.hold_time}}},
                   {"decision_rate", p.decision_rate},
                   {"local",
                    {{"lag", p.local.lag},
                     {"optimize_rate", p.local.optimize_rate},
                     {"keyframe_gap", p.local.keyframe_gap}}},
                   {"transform",
                    {{"window", p.transform.window},
                     {"rate", p.transform.rate},
                     {"observability_spread", p.transform.observability_spread}}}};
  return j.dump(2) + "\n";
}

Scenario defaultIndoorScenario() {
  Scenario s;
  s.name = "default-indoor";
  s.seed = 7;
  TrajectorySpec& t = s.trajectory;
  t.duration = 150.0;
  t.z.ramps.push_back({1.5, 2.0, 4.0});
  t.z.sines.push_back({0.25, 0.3, 0.0, 8.0, 2.0});
  t.x.sines.push_back({0.5, 0.23, 0.0, 35.0, 2.0});
  t.y.sines.push_back({0.5, 0.31, 0.0, 35.0, 2.0});
  t.yaw.sines.push_back({0.6, 0.07, 0.0, 35.0, 3.0});

  s.imu.rate = 200.0;
  s.imu.noise = ImuNoise{0.02, 0.001, 1e-4, 1e-5};
  s.imu.accel_bias = Vec3(0.03, -0.02, 0.04);
  s.imu.gyro_bias = Vec3(0.002, -0.001, 0.0015);

  SensorSpec pos;
  pos.id = "POS";
  pos.modality = Modality::Position;
  pos.rate = 20.0;
  pos.noise = {2.5e-4, 0.0};
  pos.extrinsic = RigidTransform(UnitQuaternion::identity(), Vec3(0.10, 0.0, 0.15));
  pos.frame = RigidTransform(UnitQuaternion::identity(), Vec3(3.0, -2.0, 0.5));

  SensorSpec lio;
  lio.id = "LIO";
  lio.modality = Modality::Pose;
  lio.rate = 20.0;
  lio.noise = {2e-4, 2e-4};
  lio.drift_sigma = 3e-4;
  lio.extrinsic = RigidTransform(UnitQuaternion::rotZ(degToRad(90.0)), Vec3(0.05, 0.0, 0.08));
  lio.frame = RigidTransform(UnitQuaternion::rotZ(degToRad(20.0)), Vec3(0.5, 0.3, 0.0));

  SensorSpec vio;
  vio.id = "VIO";
  vio.modality = Modality::Pose;
  vio.rate = 20.0;
  vio.noise = {1.5e-4, 1.5e-4};
  vio.drift_sigma = 1e-4;
  Mat3 cam;
  cam << 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0;
  vio.extrinsic = RigidTransform(UnitQuaternion::fromRotationMatrix(cam), Vec3(0.12, 0.02, -0.03));
  vio.frame = RigidTransform(UnitQuaternion::rotZ(degToRad(-35.0)), Vec3(-1.0, 1.0, 0.2));

  s.sensors = {pos, lio, vio};

  CorruptionEvent misalign;
  misalign.sensor = "POS";
  misalign.kind = CorruptionKind::Misalign;
  misalign.start = 0.0;
  misalign.end = t.duration;
  misalign.roll = degToRad(30.0);
  misalign.pitch = degToRad(60.0);
  misalign.yaw = degToRad(120.0);

  CorruptionEvent vio_drift;
  vio_drift.sensor = "VIO";
  vio_drift.kind = CorruptionKind::Drift;
  vio_drift.start = 18.0;
  vio_drift.end = 30.0;
  vio_drift.v0 = 0.05;
  vio_drift.lambda = 0.15;
  vio_drift.axis = Vec3::UnitY();

  CorruptionEvent lio_dropout;
  lio_dropout.sensor = "LIO";
  lio_dropout.kind = CorruptionKind::Dropout;
  lio_dropout.start = 60.0;
  lio_dropout.end = 65.0;

  CorruptionEvent pos_noise;
  pos_noise.sensor = "POS";
  pos_noise.kind = CorruptionKind::Noise;
  pos_noise.start = 82.0;
  pos_noise.end = t.duration;
  pos_noise.white_sigma = 0.02;
  pos_noise.brown_sigma = 0.005;

  CorruptionEvent pos_dropout;
  pos_dropout.sensor = "POS";
  pos_dropout.kind = CorruptionKind::Dropout;
  pos_dropout.start = 100.0;
  pos_dropout.end = 106.0;

  CorruptionEvent pos_drift;
  pos_drift.sensor = "POS";
  pos_drift.kind = CorruptionKind::Drift;
  pos_drift.start = 120.0;
  pos_drift.end = t.duration;
  pos_drift.v0 = 0.02;
  pos_drift.lambda = 0.1;
  pos_drift.axis = Vec3::UnitY();

  s.corruptions = {misalign, vio_drift, lio_dropout, pos_noise, pos_dropout, pos_drift};
  s.pipeline.local.imu_rate = s.imu.rate;
  s.pipeline.local.imu_noise = s.imu.noise;
  return s;
}

// ---- Synthesis -------------------------------------------------------------

std::uint64_t deriveSeed(std::uint64_t seed, std::string_view label, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed ^ h) + index);
}

SensorStream synthesizeImu(const Trajectory& traj, const ImuSpec& spec, std::uint64_t seed) {
  if (!(spec.rate > 0.0)) throw ScenarioError("IMU rate must be positive");
  SensorStream out("IMU", Modality::Imu, spec.rate);
  const auto n = static_cast<std::size_t>(std::floor(traj.duration() * spec.rate + 1e-9)) + 1;
  out.reserve(n);
  std::mt19937_64 rng(seed);
  const double dt = 1.0 / spec.rate;
  const double sa = spec.noise.accel_bias_rw * std::sqrt(dt);
  const double sg = spec.noise.gyro_bias_rw * std::sqrt(dt);
  Vec3 ba = spec.accel_bias;
  Vec3 bg = spec.gyro_bias;
  for (std::size_t k = 0; k < n; ++k) {
    const double t0 = static_cast<double>(k) / spec.rate;
    const double t1 = static_cast<double>(k + 1) / spec.rate;
    const UnitQuaternion q0 = traj.orientation(t0);
    const UnitQuaternion q1 = traj.orientation(t1);
    ImuReading r;
    r.gyro = (q0.inverse() * q1).log() / dt;
    r.accel = q0.inverse() * ((traj.velocity(t1) - traj.velocity(t0)) / dt - kGravity);
    const Vec3 na = gaussian3(rng);
    const Vec3 ng = gaussian3(rng);
    r.accel += ba + spec.noise.accel_sigma * na;
    r.gyro += bg + spec.noise.gyro_sigma * ng;
    ba += sa * gaussian3(rng);
    bg += sg * gaussian3(rng);
    out.append({t0, r});
  }
  return out;
}

SensorStream synthesizeSensor(const Trajectory& traj, const SensorSpec& spec, std::uint64_t seed) {
  SensorStream out(spec.id, spec.modality, spec.rate, spec.extrinsic);
  const auto first = static_cast<long>(std::llround(spec.start * spec.rate));
  const auto last = static_cast<long>(std::floor(traj.duration() * spec.rate + 1e-9));
  if (last >= first) out.reserve(static_cast<std::size_t>(last - first + 1));
  std::mt19937_64 rng(seed);
  const double drift_step = spec.drift_sigma * std::sqrt(1.0 / spec.rate);
  Vec3 drift = Vec3::Zero();
  for (long k = first; k <= last; ++k) {
    const double t = static_cast<double>(k) / spec.rate;
    const RigidTransform T = spec.frame * traj.pose(t) * spec.extrinsic;
    const Vec3 np = gaussian3(rng);
    const Vec3 p = T.translation + spec.noise.position_sigma * np + drift;
    if (spec.modality == Modality::Pose) {
      const Vec3 nq = gaussian3(rng);
      out.append({t, RigidTransform(boxplus(T.rotation, spec.noise.rotation_sigma * nq), p)});
    } else {
      out.append({t, p});
    }
    if (drift_step > 0.0) drift += drift_step * gaussian3(rng);
  }
  return out;
}

SensorStream applyCorruption(const SensorStream& stream, const CorruptionEvent& event,
                             std::uint64_t seed) {
  std::vector<TimedSample> samples;
  samples.reserve(stream.size());
  std::mt19937_64 rng(seed);
  Vec3 walk = Vec3::Zero();
  const Vec3 axis = event.axis.normalized();
  const UnitQuaternion M = event.misalignment();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    TimedSample s = stream[i];
    if (!inWindow(s.stamp, event)) {
      samples.push_back(std::move(s));
      continue;
    }
    Vec3 offset = Vec3::Zero();
    switch (event.kind) {
      case CorruptionKind::Dropout:
        continue;
      case CorruptionKind::Misalign:
        if (auto* T = std::get_if<RigidTransform>(&s.payload)) {
          *T = RigidTransform(M, Vec3::Zero()) * *T;
        } else if (auto* p = std::get_if<Vec3>(&s.payload)) {
          *p = M * *p;
        }
        samples.push_back(std::move(s));
        continue;
      case CorruptionKind::Noise: {
        const Vec3 white = gaussian3(rng);
        const Vec3 step = gaussian3(rng);
        walk += event.brown_sigma * step;
        offset = event.white_sigma * white + walk;
        break;
      }
      case CorruptionKind::Drift: {
        const double tau = s.stamp - event.start;
        const double dist = std::abs(event.lambda) < 1e-12
                                ? event.v0 * tau
                                : event.v0 * std::expm1(event.lambda * tau) / event.lambda;
        offset = dist * axis;
        break;
      }
    }
    if (auto* T = std::get_if<RigidTransform>(&s.payload)) {
      T->translation += offset;
    } else if (auto* p = std::get_if<Vec3>(&s.payload)) {
      *p += offset;
    }
    samples.push_back(std::move(s));
  }
  return stream.withSamples(std::move(samples));
}

SimulationOutput simulate(const Scenario& scenario, unsigned threads) {
  scenario.validate();
  const Trajectory traj(scenario.trajectory);
  SimulationOutput out;
  out.imu = synthesizeImu(traj, scenario.imu, deriveSeed(scenario.seed, "imu"));
  out.truth.reserve(out.imu.size());
  for (std::size_t k = 0; k < out.imu.size(); ++k) {
    const double t = out.imu[k].stamp;
    out.truth.push_back({traj.state(t), traj.angularVelocity(t)});
  }
  const std::size_t n = scenario.sensors.size();
  out.clean.resize(n);
  out.corrupted.resize(n);
  const auto work = [&](std::size_t i) {
    const SensorSpec& spec = scenario.sensors[i];
    out.clean[i] = synthesizeSensor(traj, spec, deriveSeed(scenario.seed, "sensor:" + spec.id));
    SensorStream s = out.clean[i];
    for (std::size_t e = 0; e < scenario.corruptions.size(); ++e) {
      const auto& ev = scenario.corruptions[e];
      if (ev.sensor != spec.id) continue;
      s = applyCorruption(s, ev, deriveSeed(scenario.seed, "corruption:" + spec.id, e));
    }
    out.corrupted[i] = std::move(s);
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace mfuse
