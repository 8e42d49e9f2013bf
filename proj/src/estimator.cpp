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

#include "mfuse/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "mfuse/csv.hpp"

namespace mfuse {

namespace {

constexpr int kBlocksPerState = 5;
enum Slot { kRot = 0, kPos = 1, kVel = 2, kAccBias = 3, kGyroBias = 4 };

using Vec15 = Eigen::Matrix<double, 15, 1>;

NavState navStateFrom(const std::vector<const VariableBlock*>& v, std::size_t offset) {
  NavState s;
  s.q_LI = v[offset + kRot]->rotation;
  s.p_LI = v[offset + kPos]->vec3();
  s.v_I = v[offset + kVel]->vec3();
  s.b_a = v[offset + kAccBias]->vec3();
  s.b_g = v[offset + kGyroBias]->vec3();
  return s;
}

struct ImuTerms {
  Vec15 r;
  ImuPreintegration pre;
  Vec3 w;  // R_j v_j - g dt
  Vec3 u;  // p_j - p_i - g dt^2 / 2
};

ImuTerms imuTerms(const NavState& xi, const NavState& xj, std::span<const ImuInterval> readings,
                  const Vec3& gravity) {
  ImuTerms t;
  t.pre = ImuPreintegration::integrate(readings, xi.b_a, xi.b_g);
  const double dt = t.pre.dt;
  const Mat3 Ri = xi.q_LI.matrix();
  const Mat3 Rj = xj.q_LI.matrix();
  t.w = Rj * xj.v_I - gravity * dt;
  t.u = xj.p_LI - xi.p_LI - 0.5 * gravity * dt * dt;
  t.r.segment<3>(0) = ((xi.q_LI * t.pre.dq).inverse() * xj.q_LI).log();
  t.r.segment<3>(3) = Ri.transpose() * t.w - xi.v_I - t.pre.dv;
  t.r.segment<3>(6) = Ri.transpose() * t.u - xi.v_I * dt - t.pre.dp;
  t.r.segment<3>(9) = xj.b_a - xi.b_a;
  t.r.segment<3>(12) = xj.b_g - xi.b_g;
  return t;
}

}  // namespace

ImuPreintegration ImuPreintegration::integrate(std::span<const ImuInterval> readings,
                                               const Vec3& b_a, const Vec3& b_g) {
  if (readings.empty()) throw EmptyBuffer("preintegration needs at least one IMU reading");
  ImuPreintegration p;
  p.b_a = b_a;
  p.b_g = b_g;
  Mat3 R = Mat3::Identity();
  for (const ImuInterval& m : readings) {
    const double dt = m.dt;
    const Vec3 a = m.accel - b_a;
    const Vec3 phi = (m.gyro - b_g) * dt;
    const Mat3 Ra = R * skew(a);
    p.dp_dba += p.dv_dba * dt - 0.5 * R * dt * dt;
    p.dp_dbg += p.dv_dbg * dt - 0.5 * Ra * p.dR_dbg * dt * dt;
    p.dv_dba -= R * dt;
    p.dv_dbg -= Ra * p.dR_dbg * dt;
    p.dp += p.dv * dt + 0.5 * R * a * dt * dt;
    p.dv += R * a * dt;
    const UnitQuaternion step = UnitQuaternion::exp(phi);
    p.dR_dbg = step.matrix().transpose() * p.dR_dbg - rightJacobian(phi) * dt;
    p.dq = p.dq * step;
    R = p.dq.matrix();
    p.dt += dt;
  }
  p.sample_dt = p.dt / static_cast<double>(readings.size());
  return p;
}

NavState ImuPreintegration::predict(const NavState& start, const Vec3& gravity) const {
  NavState out = start;
  const Vec3 v_world = start.q_LI * start.v_I;
  out.stamp = start.stamp + dt;
  out.q_LI = start.q_LI * dq;
  out.p_LI = start.p_LI + v_world * dt + 0.5 * gravity * dt * dt + start.q_LI * dp;
  out.v_I = out.q_LI.inverse() * (v_world + gravity * dt + start.q_LI * dv);
  return out;
}

Eigen::Matrix<double, 15, 1> imuResidual(const NavState& xi, const NavState& xj,
                                         std::span<const ImuInterval> readings,
                                         const Vec3& gravity) {
  return imuTerms(xi, xj, readings, gravity).r;
}

ImuFactor::ImuFactor(std::vector<BlockId> blocks, std::vector<ImuInterval> readings,
                     const ImuNoise& noise, const Vec3& gravity)
    : Factor(std::move(blocks)), readings_(std::move(readings)), gravity_(gravity) {
  if (this->blocks().size() != 2 * kBlocksPerState) {
    throw std::invalid_argument("IMU factor needs ten blocks");
  }
  if (readings_.empty()) throw EmptyBuffer("IMU factor without readings");
  double dt = 0.0;
  for (const auto& r : readings_) dt += r.dt;
  const double sdt = dt / static_cast<double>(readings_.size());
  const double ga = noise.gyro_sigma * noise.gyro_sigma * sdt;
  const double aa = noise.accel_sigma * noise.accel_sigma * sdt;
  sqrt_w_.segment<3>(0).setConstant(1.0 / std::sqrt(ga * dt));
  sqrt_w_.segment<3>(3).setConstant(1.0 / std::sqrt(aa * dt));
  sqrt_w_.segment<3>(6).setConstant(1.0 / std::sqrt(aa * dt * dt * dt / 3.0));
  sqrt_w_.segment<3>(9).setConstant(1.0 / (noise.accel_bias_rw * std::sqrt(dt)));
  sqrt_w_.segment<3>(12).setConstant(1.0 / (noise.gyro_bias_rw * std::sqrt(dt)));
}

void ImuFactor::evaluate(const std::vector<const VariableBlock*>& values,
                         Eigen::VectorXd& residual, std::vector<Eigen::MatrixXd>* jacobians) const {
  const NavState xi = navStateFrom(values, 0);
  const NavState xj = navStateFrom(values, kBlocksPerState);
  const ImuTerms t = imuTerms(xi, xj, readings_, gravity_);
  residual = sqrt_w_.cwiseProduct(t.r);
  if (!jacobians) return;
  auto& J = *jacobians;
  for (auto& m : J) m.setZero(15, 3);
  const Mat3 Ri = xi.q_LI.matrix();
  const Mat3 Rj = xj.q_LI.matrix();
  const Mat3 RiT = Ri.transpose();
  const Vec3 r_theta = t.r.segment<3>(0);
  const Mat3 Jinv = rightJacobianInverse(r_theta);
  const Mat3 E = (xi.q_LI * t.pre.dq).inverse().matrix() * Rj;
  const double dt = t.pre.dt;
  const Mat3 I = Mat3::Identity();

  // Rotation rows.
  J[kRot].block<3, 3>(0, 0) = -Jinv * Rj.transpose() * Ri;
  J[kGyroBias].block<3, 3>(0, 0) = -Jinv * E.transpose() * t.pre.dR_dbg;
  J[kBlocksPerState + kRot].block<3, 3>(0, 0) = Jinv;
  // Velocity rows.
  J[kRot].block<3, 3>(3, 0) = skew(RiT * t.w);
  J[kVel].block<3, 3>(3, 0) = -I;
  J[kAccBias].block<3, 3>(3, 0) = -t.pre.dv_dba;
  J[kGyroBias].block<3, 3>(3, 0) = -t.pre.dv_dbg;
  J[kBlocksPerState + kRot].block<3, 3>(3, 0) = -RiT * Rj * skew(xj.v_I);
  J[kBlocksPerState + kVel].block<3, 3>(3, 0) = RiT * Rj;
  // Position rows.
  J[kRot].block<3, 3>(6, 0) = skew(RiT * t.u);
  J[kPos].block<3, 3>(6, 0) = -RiT;
  J[kVel].block<3, 3>(6, 0) = -I * dt;
  J[kAccBias].block<3, 3>(6, 0) = -t.pre.dp_dba;
  J[kGyroBias].block<3, 3>(6, 0) = -t.pre.dp_dbg;
  J[kBlocksPerState + kPos].block<3, 3>(6, 0) = RiT;
  // Bias random walk rows.
  J[kAccBias].block<3, 3>(9, 0) = -I;
  J[kBlocksPerState + kAccBias].block<3, 3>(9, 0) = I;
  J[kGyroBias].block<3, 3>(12, 0) = -I;
  J[kBlocksPerState + kGyroBias].block<3, 3>(12, 0) = I;
  for (auto& m : J) m = sqrt_w_.asDiagonal() * m;
}

RigidTransform relativeImuPose(const RigidTransform& T_Aa_i, const RigidTransform& T_Aa_j,
                               const RigidTransform& T_Is) {
  return T_Is * T_Aa_i.inverse() * T_Aa_j * T_Is.inverse();
}

Eigen::Matrix<double, 6, 1> poseBetweenResidual(const NavState& xi, const NavState& xj,
                                                const RigidTransform& T_IJ, double w_o,
                                                double w_q) {
  Eigen::Matrix<double, 6, 1> r;
  r.head<3>() = std::sqrt(w_o) * (xj.p_LI - xi.p_LI - xi.q_LI * T_IJ.translation);
  r.tail<3>() = std::sqrt(0.5 * w_q) * boxminus(xj.q_LI, xi.q_LI * T_IJ.rotation);
  return r;
}

PoseBetweenFactor::PoseBetweenFactor(std::vector<BlockId> blocks, const RigidTransform& T_IJ,
                                     double w_o, double w_q)
    : Factor(std::move(blocks)),
      T_IJ_(T_IJ),
      sqrt_wo_(std::sqrt(w_o)),
      sqrt_wq_(std::sqrt(0.5 * w_q)) {
  if (!(w_o > 0.0) || !(w_q > 0.0)) throw std::invalid_argument("pose weights must be positive");
}

void PoseBetweenFactor::evaluate(const std::vector<const VariableBlock*>& values,
                                 Eigen::VectorXd& residual,
                                 std::vector<Eigen::MatrixXd>* jacobians) const {
  const UnitQuaternion& qi = values[0]->rotation;
  const UnitQuaternion& qj = values[2]->rotation;
  const Vec3 pi = values[1]->vec3();
  const Vec3 pj = values[3]->vec3();
  const Mat3 Ri = qi.matrix();
  const Vec3 e_q = boxminus(qj, qi * T_IJ_.rotation);
  residual.resize(6);
  residual.head<3>() = sqrt_wo_ * (pj - pi - Ri * T_IJ_.translation);
  residual.tail<3>() = sqrt_wq_ * e_q;
  if (!jacobians) return;
  auto& J = *jacobians;
  for (auto& m : J) m.setZero(6, 3);
  const Mat3 Jinv = rightJacobianInverse(e_q);
  J[0].topRows<3>() = sqrt_wo_ * Ri * skew(T_IJ_.translation);
  J[0].bottomRows<3>() = -sqrt_wq_ * Jinv * qj.matrix().transpose() * Ri;
  J[1].topRows<3>() = -sqrt_wo_ * Mat3::Identity();
  J[2].bottomRows<3>() = sqrt_wq_ * Jinv;
  J[3].topRows<3>() = sqrt_wo_ * Mat3::Identity();
}

Vec3 positionBetweenResidual(const NavState& xi, const NavState& xj, const Vec3& dp_A,
                             const Vec3& lever, const UnitQuaternion& q_AL, double w_p) {
  return std::sqrt(w_p) * ((xj.p_LI + xj.q_LI * lever) - (xi.p_LI + xi.q_LI * lever) -
                           q_AL.inverse() * dp_A);
}

PositionBetweenFactor::PositionBetweenFactor(std::vector<BlockId> blocks, const Vec3& dp_A,
                                             const Vec3& lever, const UnitQuaternion& q_AL,
                                             double w_p)
    : Factor(std::move(blocks)),
      dp_L_(q_AL.inverse() * dp_A),
      lever_(lever),
      sqrt_w_(std::sqrt(w_p)) {
  if (!(w_p > 0.0)) throw std::invalid_argument("position weight must be positive");
}

void PositionBetweenFactor::evaluate(const std::vector<const VariableBlock*>& values,
                                     Eigen::VectorXd& residual,
                                     std::vector<Eigen::MatrixXd>* jacobians) const {
  const Mat3 Ri = values[0]->rotation.matrix();
  const Mat3 Rj = values[2]->rotation.matrix();
  const Vec3 pi = values[1]->vec3();
  const Vec3 pj = values[3]->vec3();
  residual = sqrt_w_ * ((pj + Rj * lever_) - (pi + Ri * lever_) - dp_L_);
  if (!jacobians) return;
  auto& J = *jacobians;
  J[0] = sqrt_w_ * Ri * skew(lever_);
  J[1] = -sqrt_w_ * Mat3::Identity();
  J[2] = -sqrt_w_ * Rj * skew(lever_);
  J[3] = sqrt_w_ * Mat3::Identity();
}

Vec3 transformResidual(const UnitQuaternion& q_AL, const Vec3& p_AL, const Vec3& p_bar,
                       const Vec3& p_L, double w_t) {
  return std::sqrt(w_t) * (p_bar - (p_AL + q_AL * p_L));
}

TransformFactor::TransformFactor(std::vector<BlockId> blocks, const Vec3& p_bar, const Vec3& p_L,
                                 double w_t)
    : Factor(std::move(blocks)), p_bar_(p_bar), p_L_(p_L), sqrt_w_(std::sqrt(w_t)) {
  if (!(w_t > 0.0)) throw std::invalid_argument("transform weight must be positive");
}

void TransformFactor::evaluate(const std::vector<const VariableBlock*>& values,
                               Eigen::VectorXd& residual,
                               std::vector<Eigen::MatrixXd>* jacobians) const {
  const Mat3 R = values[0]->rotation.matrix();
  residual = sqrt_w_ * (p_bar_ - (values[1]->vec3() + R * p_L_));
  if (!jacobians) return;
  (*jacobians)[0] = sqrt_w_ * R * skew(p_L_);
  (*jacobians)[1] = -sqrt_w_ * Mat3::Identity();
}

TransformRotationFactor::TransformRotationFactor(BlockId block, const UnitQuaternion& q_bar,
                                                 const UnitQuaternion& q_Ls, double w_r)
    : Factor({block}), q_bar_inv_(q_bar.inverse()), q_Ls_(q_Ls), sqrt_w_(std::sqrt(w_r)) {
  if (!(w_r > 0.0)) throw std::invalid_argument("rotation weight must be positive");
}

void TransformRotationFactor::evaluate(const std::vector<const VariableBlock*>& values,
                                       Eigen::VectorXd& residual,
                                       std::vector<Eigen::MatrixXd>* jacobians) const {
  const Vec3 e = (q_bar_inv_ * values[0]->rotation * q_Ls_).log();
  residual = sqrt_w_ * e;
  if (!jacobians) return;
  (*jacobians)[0] = sqrt_w_ * rightJacobianInverse(e) * q_Ls_.matrix().transpose();
}

// ---------------------------------------------------------------------------
// Local graph

LocalGraph::LocalGraph(const LocalGraphConfig& cfg, const NavState& initial)
    : cfg_(cfg), graph_(cfg.lag) {
  const Keyframe kf{next_index_++, initial.stamp};
  const auto ids = blockIds(kf.index);
  graph_.addBlock(ids[kRot], VariableBlock::makeRotation(initial.q_LI));
  graph_.addBlock(ids[kPos], VariableBlock::makeVector(initial.p_LI));
  graph_.addBlock(ids[kVel], VariableBlock::makeVector(initial.v_I));
  graph_.addBlock(ids[kAccBias], VariableBlock::makeVector(initial.b_a));
  graph_.addBlock(ids[kGyroBias], VariableBlock::makeVector(initial.b_g));
  graph_.addState(kf.stamp, ids);
  keyframes_.emplace(kf.stamp, kf);
  const auto w = [](double sigma) { return Vec3::Constant(1.0 / (sigma * sigma)); };
  graph_.addFactor(std::make_shared<RotationPriorFactor>(ids[kRot], initial.q_LI,
                                                         w(cfg_.prior_rotation_sigma)));
  graph_.addFactor(std::make_shared<VectorPriorFactor>(ids[kPos], initial.p_LI,
                                                       w(cfg_.prior_position_sigma)));
  graph_.addFactor(std::make_shared<VectorPriorFactor>(ids[kVel], initial.v_I,
                                                       w(cfg_.prior_velocity_sigma)));
  graph_.addFactor(std::make_shared<VectorPriorFactor>(ids[kAccBias], initial.b_a,
                                                       w(cfg_.prior_accel_bias_sigma)));
  graph_.addFactor(std::make_shared<VectorPriorFactor>(ids[kGyroBias], initial.b_g,
                                                       w(cfg_.prior_gyro_bias_sigma)));
}

std::vector<BlockId> LocalGraph::blockIds(std::size_t index) const {
  std::vector<BlockId> ids(kBlocksPerState);
  for (int k = 0; k < kBlocksPerState; ++k) ids[k] = index * kBlocksPerState + k;
  return ids;
}

NavState LocalGraph::stateOf(const Keyframe& kf) const {
  const auto ids = blockIds(kf.index);
  NavState s;
  s.stamp = kf.stamp;
  s.q_LI = graph_.block(ids[kRot]).rotation;
  s.p_LI = graph_.block(ids[kPos]).vec3();
  s.v_I = graph_.block(ids[kVel]).vec3();
  s.b_a = graph_.block(ids[kAccBias]).vec3();
  s.b_g = graph_.block(ids[kGyroBias]).vec3();
  return s;
}

NavState LocalGraph::keyframe(double stamp) const {
  auto it = keyframes_.find(stamp);
  if (it == keyframes_.end()) throw std::out_of_range("no keyframe at requested stamp");
  return stateOf(it->second);
}

std::vector<double> LocalGraph::keyframeStamps() const {
  std::vector<double> out;
  for (const auto& [stamp, kf] : keyframes_) out.push_back(stamp);
  return out;
}

std::vector<ImuInterval> LocalGraph::readingsBetween(double t0, double t1) const {
  auto it = std::lower_bound(imu_.begin(), imu_.end(), t0,
                             [](const auto& m, double t) { return m.first < t; });
  std::vector<ImuInterval> out;
  for (; it != imu_.end() && it->first < t1; ++it) {
    const double next = (it + 1 != imu_.end()) ? (it + 1)->first : t1;
    out.push_back({it->second.accel, it->second.gyro, std::min(next, t1) - it->first});
  }
  return out;
}

void LocalGraph::addImu(double stamp, const ImuReading& reading) {
  if (!imu_.empty() && stamp <= imu_.back().first) {
    throw std::invalid_argument("IMU readings must have increasing stamps");
  }
  imu_.emplace_back(stamp, reading);
  const double last = keyframes_.rbegin()->first;
  if (stamp - last >= cfg_.keyframe_gap - 0.25 / cfg_.imu_rate) createKeyframe(stamp);
}

LocalGraph::Keyframe LocalGraph::createKeyframe(double stamp) {
  const Keyframe& prev = keyframes_.rbegin()->second;
  const NavState prev_state = stateOf(prev);
  std::vector<ImuInterval> readings = readingsBetween(prev.stamp, stamp);
  const ImuPreintegration pre =
      ImuPreintegration::integrate(readings, prev_state.b_a, prev_state.b_g);
  const NavState init = pre.predict(prev_state, cfg_.gravity);
  const Keyframe kf{next_index_++, stamp};
  const auto ids = blockIds(kf.index);
  graph_.addBlock(ids[kRot], VariableBlock::makeRotation(init.q_LI));
  graph_.addBlock(ids[kPos], VariableBlock::makeVector(init.p_LI));
  graph_.addBlock(ids[kVel], VariableBlock::makeVector(init.v_I));
  graph_.addBlock(ids[kAccBias], VariableBlock::makeVector(init.b_a));
  graph_.addBlock(ids[kGyroBias], VariableBlock::makeVector(init.b_g));
  graph_.addState(stamp, ids);
  std::vector<BlockId> factor_blocks = blockIds(prev.index);
  factor_blocks.insert(factor_blocks.end(), ids.begin(), ids.end());
  graph_.addFactor(std::make_shared<ImuFactor>(std::move(factor_blocks), std::move(readings),
                                               cfg_.imu_noise, cfg_.gravity));
  keyframes_.emplace(stamp, kf);
  return kf;
}

std::optional<LocalGraph::Keyframe> LocalGraph::keyframeAt(double stamp) {
  const double tol = 0.5 / cfg_.imu_rate;
  auto it = keyframes_.lower_bound(stamp - tol);
  if (it != keyframes_.end() && std::abs(it->first - stamp) <= tol) return it->second;
  if (imu_.empty()) return std::nullopt;
  const double latest = imu_.back().first;
  if (std::abs(latest - stamp) <= tol && latest > keyframes_.rbegin()->first) {
    return createKeyframe(latest);
  }
  return std::nullopt;
}

bool LocalGraph::addPose(const std::string& sensor, double stamp, const RigidTransform& T_Aa,
                         const RigidTransform& T_Is, const SensorNoise& noise) {
  const auto kf = keyframeAt(stamp);
  if (!kf) return false;
  auto last = last_.find(sensor);
  if (last != last_.end() && last->second.stamp < kf->stamp) {
    auto prev = keyframes_.find(last->second.stamp);
    if (prev != keyframes_.end()) {
      const RigidTransform T_IJ = relativeImuPose(last->second.pose, T_Aa, T_Is);
      const double sp = noise.position_sigma;
      const double sq = noise.rotation_sigma;
      const auto bi = blockIds(prev->second.index);
      const auto bj = blockIds(kf->index);
      graph_.addFactor(std::make_shared<PoseBetweenFactor>(
          std::vector<BlockId>{bi[kRot], bi[kPos], bj[kRot], bj[kPos]}, T_IJ,
          1.0 / (2.0 * sp * sp), 1.0 / (sq * sq)));
    }
  }
  last_[sensor] = {kf->stamp, T_Aa};
  return true;
}

bool LocalGraph::addPosition(const std::string& sensor, double stamp, const Vec3& p_A,
                             const RigidTransform& T_Is, const UnitQuaternion& q_AL,
                             const SensorNoise& noise) {
  const auto kf = keyframeAt(stamp);
  if (!kf) return false;
  auto last = last_.find(sensor);
  if (last != last_.end() && last->second.stamp < kf->stamp) {
    auto prev = keyframes_.find(last->second.stamp);
    if (prev != keyframes_.end()) {
      const double sp = noise.position_sigma;
      const auto bi = blockIds(prev->second.index);
      const auto bj = blockIds(kf->index);
      graph_.addFactor(std::make_shared<PositionBetweenFactor>(
          std::vector<BlockId>{bi[kRot], bi[kPos], bj[kRot], bj[kPos]},
          p_A - last->second.pose.translation, T_Is.translation, q_AL, 1.0 / (2.0 * sp * sp)));
    }
  }
  last_[sensor] = {kf->stamp, RigidTransform(UnitQuaternion::identity(), p_A)};
  return true;
}

OptimizeResult LocalGraph::optimize() {
  const OptimizeResult result = graph_.optimize(cfg_.lm);
  const double now = imu_.empty() ? keyframes_.rbegin()->first : imu_.back().first;
  graph_.marginalizeToLag(now);
  for (auto it = keyframes_.begin(); it != keyframes_.end();) {
    it = graph_.states().count(it->first) ? std::next(it) : keyframes_.erase(it);
  }
  const double oldest = keyframes_.begin()->first;
  auto keep = std::lower_bound(imu_.begin(), imu_.end(), oldest,
                               [](const auto& m, double t) { return m.first < t; });
  imu_.erase(imu_.begin(), keep);
  return result;
}

LocalSample LocalGraph::publish() const {
  const Keyframe& kf = keyframes_.rbegin()->second;
  NavState state = stateOf(kf);
  LocalSample out;
  if (!imu_.empty() && imu_.back().first > kf.stamp) {
    const auto readings = readingsBetween(kf.stamp, imu_.back().first);
    state = ImuPreintegration::integrate(readings, state.b_a, state.b_g).predict(state, cfg_.gravity);
    state.stamp = imu_.back().first;
  }
  out.state = state;
  if (!imu_.empty()) out.omega_I = imu_.back().second.gyro - state.b_g;
  return out;
}

// ---------------------------------------------------------------------------
// Transform graph

TransformGraph::TransformGraph(std::string sensor_id, Modality modality, const SensorNoise& noise,
                               const TransformGraphConfig& cfg)
    : sensor_id_(std::move(sensor_id)), modality_(modality), noise_(noise), cfg_(cfg) {
  if (modality_ == Modality::Imu) throw std::invalid_argument("IMU streams have no frame transform");
}

void TransformGraph::addMeasurement(double stamp, const Vec3& p_bar,
                                    const std::optional<UnitQuaternion>& q_bar,
                                    const RigidTransform& T_Ls) {
  if (!measurements_.empty() && stamp <= measurements_.back().stamp) {
    throw std::invalid_argument("transform measurements must have increasing stamps");
  }
  measurements_.push_back({stamp, p_bar, q_bar, T_Ls});
}

void TransformGraph::update(double now) {
  if (state_.frozen) return;
  const double cutoff = now - cfg_.window;
  auto keep = std::find_if(measurements_.begin(), measurements_.end(),
                           [&](const Measurement& m) { return m.stamp >= cutoff; });
  measurements_.erase(measurements_.begin(), keep);
  state_.stamp = now;
  if (measurements_.size() < 3) return;

  const bool has_rotation = modality_ == Modality::Pose;
  if (!initialized_) {
    const Measurement& m0 = measurements_.front();
    if (has_rotation && m0.q_bar) {
      state_.q_AL = *m0.q_bar * m0.T_Ls.rotation.inverse();
    } else {
      state_.q_AL = UnitQuaternion::identity();
    }
    state_.p_AL = m0.p_bar - state_.q_AL * m0.T_Ls.translation;
    held_rotation_ = state_.q_AL;
    initialized_ = true;
  }

  // Excitation of the local mount trajectory.
  Vec3 mean = Vec3::Zero();
  for (const auto& m : measurements_) mean += m.T_Ls.translation;
  mean /= static_cast<double>(measurements_.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& m : measurements_) {
    const Vec3 d = m.T_Ls.translation - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(measurements_.size());
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 spread = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();  // ascending
  const Vec3 line_axis = eig.eigenvectors().col(2);
  enum class Mode { Full, Line, Point } mode = Mode::Full;
  if (!has_rotation) {
    if (spread[2] < cfg_.observability_spread) {
      mode = Mode::Point;
    } else if (spread[1] < cfg_.observability_spread) {
      mode = Mode::Line;
    }
  }

  Graph g(cfg_.window);
  g.addBlock(0, VariableBlock::makeRotation(state_.q_AL));
  g.addBlock(1, VariableBlock::makeVector(state_.p_AL));
  const double sp = noise_.position_sigma;
  const double w_t = 1.0 / (sp * sp);
  for (const auto& m : measurements_) {
    g.addFactor(std::make_shared<TransformFactor>(std::vector<BlockId>{0, 1}, m.p_bar,
                                                  m.T_Ls.translation, w_t));
    if (has_rotation && m.q_bar) {
      const double sr = noise_.rotation_sigma;
      g.addFactor(std::make_shared<TransformRotationFactor>(0, *m.q_bar, m.T_Ls.rotation,
                                                            1.0 / (sr * sr)));
    }
  }
  if (mode == Mode::Point) g.setFixed(0, true);
  const OptimizeResult res = g.optimize(cfg_.lm);
  if (res.diverged) return;
  UnitQuaternion q = g.block(0).rotation;
  Vec3 p = g.block(1).vec3();
  if (mode == Mode::Line) {
    // Rotation about the line is unconstrained: restore the held twist and
    // re-fit the translation in closed form.
    const double twist = twistAngle(q, line_axis);
    const double held = twistAngle(held_rotation_, line_axis);
    const UnitQuaternion swing = q * UnitQuaternion::fromAxisAngle(line_axis, -twist);
    q = swing * UnitQuaternion::fromAxisAngle(line_axis, held);
    Vec3 acc = Vec3::Zero();
    for (const auto& m : measurements_) acc += m.p_bar - q * m.T_Ls.translation;
    p = acc / static_cast<double>(measurements_.size());
  }
  state_.q_AL = q;
  state_.p_AL = p;
  state_.observable = mode == Mode::Full;
  if (state_.observable) {
    held_rotation_ = q;
    if (res.converged) state_.available = true;
  }
}

std::vector<SensorTransformState> runTransformGraph(const SensorStream& stream,
                                                    const SensorNoise& noise,
                                                    const LocalSeries& local,
                                                    const TransformGraphConfig& cfg) {
  std::vector<SensorTransformState> out;
  if (stream.empty() || local.empty()) return out;
  TransformGraph graph(stream.id(), stream.modality(), noise, cfg);
  const double period = 1.0 / cfg.rate;
  const double t_begin = std::max(stream[0].stamp, local.front().state.stamp);
  const double t_end = std::min(stream.samples().back().stamp, local.back().state.stamp);
  std::size_t next = 0;
  for (long k = 1;; ++k) {
    const double t = t_begin + k * period;
    if (t > t_end + 1e-9) break;
    for (; next < stream.size() && stream[next].stamp <= t + 1e-9; ++next) {
      const auto ls = interpolate(local, stream[next].stamp);
      if (!ls) continue;
      const RigidTransform T_Ls = ls->state.pose() * stream.extrinsic();
      std::optional<UnitQuaternion> q_bar;
      if (stream.modality() == Modality::Pose) q_bar = stream.pose(next).rotation;
      graph.addMeasurement(stream[next].stamp, stream.position(next), q_bar, T_Ls);
    }
    graph.update(t);
    out.push_back(graph.state());
  }
  return out;
}

LocalSeries runLocalGraph(const SensorStream& imu, const std::vector<FusedInput>& inputs,
                          const std::vector<FusionDecision>& decisions, const NavState& initial,
                          const LocalGraphConfig& cfg) {
  if (imu.modality() != Modality::Imu) throw std::invalid_argument("runLocalGraph needs an IMU stream");
  LocalGraph graph(cfg, initial);
  LocalSeries out;
  out.reserve(imu.size());
  std::vector<std::size_t> cursor(inputs.size(), 0);
  std::size_t decision = 0;
  const double opt_period = 1.0 / cfg.optimize_rate;
  double next_opt = initial.stamp + opt_period;
  const auto selected = [&](std::size_t i, double stamp) {
    if (decisions.empty()) return true;
    while (decision + 1 < decisions.size() && decisions[decision + 1].stamp <= stamp) ++decision;
    if (decisions[decision].stamp > stamp) return false;
    return decisions[decision].selected == inputs[i].stream->id();
  };
  for (std::size_t k = 0; k < imu.size(); ++k) {
    const double t = imu[k].stamp;
    if (t < initial.stamp) continue;
    graph.addImu(t, imu.imu(k));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const SensorStream& s = *inputs[i].stream;
      for (; cursor[i] < s.size() && s[cursor[i]].stamp <= t + 1e-9; ++cursor[i]) {
        const double stamp = s[cursor[i]].stamp;
        if (stamp < initial.stamp || !selected(i, stamp)) continue;
        if (s.modality() == Modality::Pose) {
          graph.addPose(s.id(), stamp, s.pose(cursor[i]), s.extrinsic(), inputs[i].noise);
        } else {
          graph.addPosition(s.id(), stamp, s.position(cursor[i]), s.extrinsic(), inputs[i].q_AL,
                            inputs[i].noise);
        }
      }
    }
    if (t + 1e-9 >= next_opt) {
      graph.optimize();
      while (next_opt <= t + 1e-9) next_opt += opt_period;
    }
    out.push_back(graph.publish());
  }
  return out;
}

void writeFusedHeader(std::ostream& out) {
  out << "stamp,qw,qx,qy,qz,px,py,pz,vx,vy,vz,selected_sensor\n";
}

void writeFusedRow(std::ostream& out, const LocalSample& s,
                   const std::optional<std::string>& selected) {
  const NavState& x = s.state;
  const Vec3 v = x.velocityInLocal();
  out << csv::num(x.stamp) << ',' << csv::num(x.q_LI.w()) << ',' << csv::num(x.q_LI.x()) << ','
      << csv::num(x.q_LI.y()) << ',' << csv::num(x.q_LI.z()) << ',' << csv::num(x.p_LI.x())
      << ',' << csv::num(x.p_LI.y()) << ',' << csv::num(x.p_LI.z()) << ',' << csv::num(v.x())
      << ',' << csv::num(v.y()) << ',' << csv::num(v.z()) << ','
      << (selected ? *selected : std::string("none")) << '\n';
}

}  // namespace mfuse
