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

#include "mfuse/solver.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace mfuse {

namespace {

constexpr double kMinDamping = 1e-9;
constexpr double kMaxLambda = 1e12;
constexpr double kMinLambda = 1e-12;

}  // namespace

VariableBlock VariableBlock::makeRotation(const UnitQuaternion& q) {
  VariableBlock b;
  b.kind = BlockKind::Rotation;
  b.rotation = q;
  return b;
}

VariableBlock VariableBlock::makeVector(const Eigen::VectorXd& v) {
  VariableBlock b;
  b.kind = BlockKind::Vector;
  b.vector = v;
  return b;
}

void VariableBlock::retract(const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (kind == BlockKind::Rotation) {
    rotation = boxplus(rotation, Vec3(delta.head<3>()));
  } else {
    vector += delta;
  }
}

std::vector<Eigen::MatrixXd> jacobians(const Factor& f,
                                       const std::vector<const VariableBlock*>& values) {
  Eigen::VectorXd r(f.residualDim());
  std::vector<Eigen::MatrixXd> J(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    J[i] = Eigen::MatrixXd::Zero(f.residualDim(), values[i]->dim());
  }
  f.evaluate(values, r, &J);
  return J;
}

std::vector<Eigen::MatrixXd> numericalJacobians(const Factor& f,
                                                const std::vector<const VariableBlock*>& values,
                                                double step) {
  const int m = f.residualDim();
  std::vector<Eigen::MatrixXd> J;
  std::vector<VariableBlock> copies;
  copies.reserve(values.size());
  for (const auto* v : values) copies.push_back(*v);
  std::vector<const VariableBlock*> ptrs;
  for (const auto& c : copies) ptrs.push_back(&c);
  Eigen::VectorXd rp(m);
  Eigen::VectorXd rm(m);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int d = values[i]->dim();
    Eigen::MatrixXd Ji(m, d);
    for (int k = 0; k < d; ++k) {
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(d);
      delta[k] = step;
      copies[i] = *values[i];
      copies[i].retract(delta);
      f.evaluate(ptrs, rp, nullptr);
      copies[i] = *values[i];
      copies[i].retract(-delta);
      f.evaluate(ptrs, rm, nullptr);
      Ji.col(k) = (rp - rm) / (2.0 * step);
    }
    copies[i] = *values[i];
    J.push_back(std::move(Ji));
  }
  return J;
}

VectorPriorFactor::VectorPriorFactor(BlockId id, Eigen::VectorXd target, Eigen::VectorXd weights)
    : Factor({id}), target_(std::move(target)), sqrt_w_(weights.cwiseSqrt()) {
  if (target_.size() != sqrt_w_.size()) {
    throw std::invalid_argument("prior target and weights differ in size");
  }
  if ((weights.array() <= 0.0).any()) throw std::invalid_argument("prior weights must be positive");
}

void VectorPriorFactor::evaluate(const std::vector<const VariableBlock*>& values,
                                 Eigen::VectorXd& residual,
                                 std::vector<Eigen::MatrixXd>* jacobians) const {
  residual = sqrt_w_.cwiseProduct(values[0]->vector - target_);
  if (jacobians) (*jacobians)[0] = sqrt_w_.asDiagonal();
}

RotationPriorFactor::RotationPriorFactor(BlockId id, const UnitQuaternion& target,
                                         const Vec3& weights)
    : Factor({id}), target_(target), sqrt_w_(weights.cwiseSqrt()) {
  if ((weights.array() <= 0.0).any()) throw std::invalid_argument("prior weights must be positive");
}

void RotationPriorFactor::evaluate(const std::vector<const VariableBlock*>& values,
                                   Eigen::VectorXd& residual,
                                   std::vector<Eigen::MatrixXd>* jacobians) const {
  const Vec3 e = boxminus(values[0]->rotation, target_);
  residual = sqrt_w_.cwiseProduct(e);
  if (jacobians) (*jacobians)[0] = sqrt_w_.asDiagonal() * rightJacobianInverse(e);
}

void Graph::addBlock(BlockId id, VariableBlock block) {
  if (!blocks_.emplace(id, std::move(block)).second) {
    throw std::invalid_argument("duplicate block id " + std::to_string(id));
  }
}

const VariableBlock& Graph::block(BlockId id) const {
  auto it = blocks_.find(id);
  if (it == blocks_.end()) throw std::out_of_range("unknown block id " + std::to_string(id));
  return it->second;
}

VariableBlock& Graph::block(BlockId id) {
  auto it = blocks_.find(id);
  if (it == blocks_.end()) throw std::out_of_range("unknown block id " + std::to_string(id));
  return it->second;
}

FactorId Graph::addFactor(std::shared_ptr<const Factor> factor) {
  for (BlockId b : factor->blocks()) {
    if (!hasBlock(b)) throw std::invalid_argument("factor references unknown block");
  }
  const FactorId id = next_factor_++;
  factors_.emplace(id, std::move(factor));
  return id;
}

void Graph::removeFactor(FactorId id) { factors_.erase(id); }

void Graph::addState(double stamp, std::vector<BlockId> blocks) {
  for (BlockId b : blocks) {
    if (!hasBlock(b)) throw std::invalid_argument("state references unknown block");
  }
  states_[stamp] = std::move(blocks);
}

std::vector<const VariableBlock*> Graph::valuesOf(const Factor& f) const {
  std::vector<const VariableBlock*> v;
  v.reserve(f.blocks().size());
  for (BlockId b : f.blocks()) v.push_back(&blocks_.at(b));
  return v;
}

double Graph::cost() const {
  double total = 0.0;
  Eigen::VectorXd r;
  for (const auto& [id, f] : factors_) {
    r.resize(f->residualDim());
    f->evaluate(valuesOf(*f), r, nullptr);
    total += r.squaredNorm();
  }
  return total;
}

namespace {

// Gauss-Newton system of `factors` over the blocks listed in `offset`
// (others are held constant).
template <typename FactorRange, typename Lookup>
void linearize(const FactorRange& factors, const Lookup& valuesOf,
               const std::map<BlockId, int>& offset, Eigen::MatrixXd& H, Eigen::VectorXd& g) {
  H.setZero();
  g.setZero();
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> J;
  for (const auto& f : factors) {
    const auto values = valuesOf(*f);
    r.resize(f->residualDim());
    J.assign(values.size(), Eigen::MatrixXd());
    for (std::size_t i = 0; i < values.size(); ++i) {
      J[i] = Eigen::MatrixXd::Zero(f->residualDim(), values[i]->dim());
    }
    f->evaluate(values, r, &J);
    const auto& ids = f->blocks();
    for (std::size_t a = 0; a < ids.size(); ++a) {
      auto oa = offset.find(ids[a]);
      if (oa == offset.end()) continue;
      const int da = static_cast<int>(J[a].cols());
      g.segment(oa->second, da).noalias() += J[a].transpose() * r;
      for (std::size_t b = 0; b < ids.size(); ++b) {
        auto ob = offset.find(ids[b]);
        if (ob == offset.end()) continue;
        H.block(oa->second, ob->second, da, J[b].cols()).noalias() += J[a].transpose() * J[b];
      }
    }
  }
}

}  // namespace

MarginalPriorFactor::MarginalPriorFactor(std::vector<BlockId> blocks,
                                         std::vector<VariableBlock> linearization,
                                         Eigen::MatrixXd sqrt_information, Eigen::VectorXd offset)
    : Factor(std::move(blocks)),
      x0_(std::move(linearization)),
      L_(std::move(sqrt_information)),
      offset_(std::move(offset)) {
  int n = 0;
  for (const auto& b : x0_) n += b.dim();
  if (x0_.size() != this->blocks().size() || L_.cols() != n || L_.rows() != offset_.size()) {
    throw std::invalid_argument("marginal prior dimensions disagree");
  }
}

void MarginalPriorFactor::evaluate(const std::vector<const VariableBlock*>& values,
                                   Eigen::VectorXd& residual,
                                   std::vector<Eigen::MatrixXd>* jacobians) const {
  Eigen::VectorXd delta(L_.cols());
  int off = 0;
  for (std::size_t i = 0; i < x0_.size(); ++i) {
    const int d = x0_[i].dim();
    if (x0_[i].kind == BlockKind::Rotation) {
      const Vec3 e = boxminus(values[i]->rotation, x0_[i].rotation);
      delta.segment<3>(off) = e;
      if (jacobians) (*jacobians)[i] = L_.middleCols(off, 3) * rightJacobianInverse(e);
    } else {
      delta.segment(off, d) = values[i]->vector - x0_[i].vector;
      if (jacobians) (*jacobians)[i] = L_.middleCols(off, d);
    }
    off += d;
  }
  residual = L_ * delta + offset_;
}

OptimizeResult Graph::optimize(const LmOptions& options) {
  if (factors_.empty()) throw std::invalid_argument("optimize needs at least one factor");
  OptimizeResult result;
  std::map<BlockId, int> offset;
  int n = 0;
  for (const auto& [id, b] : blocks_) {
    if (b.fixed) continue;
    offset[id] = n;
    n += b.dim();
  }
  double current = cost();
  result.initial_cost = current;
  result.final_cost = current;
  result.cost_history.push_back(current);
  if (n == 0) {
    result.converged = true;
    return result;
  }

  double lambda = options.initial_lambda;
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd g(n);
  std::vector<const Factor*> all;
  all.reserve(factors_.size());
  for (const auto& [fid, f] : factors_) all.push_back(f.get());
  const auto lookup = [this](const Factor& f) { return valuesOf(f); };
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    linearize(all, lookup, offset, H, g);

    const Eigen::VectorXd damping = H.diagonal().cwiseMax(kMinDamping);
    bool accepted = false;
    double candidate = current;
    for (int retry = 0; retry < options.max_retries && !accepted; ++retry) {
      Eigen::MatrixXd A = H;
      A.diagonal() += lambda * damping;
      const Eigen::VectorXd delta = A.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda = std::min(lambda * 10.0, kMaxLambda);
        continue;
      }
      const std::map<BlockId, VariableBlock> saved = blocks_;
      for (const auto& [id, off] : offset) {
        auto& blk = blocks_.at(id);
        blk.retract(delta.segment(off, blk.dim()));
      }
      candidate = cost();
      if (std::isfinite(candidate) && candidate < current) {
        accepted = true;
        lambda = std::max(lambda / 3.0, kMinLambda);
      } else {
        blocks_ = saved;
        lambda = std::min(lambda * 4.0, kMaxLambda);
      }
    }
    if (!accepted) {
      // Either already at a minimum to working precision or stuck.
      const double grad = g.lpNorm<Eigen::Infinity>();
      if (iter == 0 && grad > 1e-9 * (1.0 + current) && current > 1e-24) {
        result.diverged = true;
      } else {
        result.converged = true;
      }
      break;
    }
    ++result.iterations;
    const double rel = (current - candidate) / std::max(current, 1e-300);
    current = candidate;
    result.cost_history.push_back(current);
    if (rel < options.tolerance || current < 1e-24) {
      result.converged = true;
      break;
    }
  }
  result.final_cost = current;
  return result;
}

void Graph::marginalizeToLag(double now) {
  const double cutoff = now - lag_;
  std::set<BlockId> removed;
  while (states_.size() > 1 && states_.begin()->first < cutoff) {
    for (BlockId b : states_.begin()->second) removed.insert(b);
    states_.erase(states_.begin());
  }
  if (removed.empty()) return;

  std::vector<const Factor*> dropped;
  std::vector<FactorId> dropped_ids;
  std::set<BlockId> kept;
  for (const auto& [fid, f] : factors_) {
    bool touches = false;
    for (BlockId b : f->blocks()) touches |= removed.count(b) > 0;
    if (!touches) continue;
    dropped.push_back(f.get());
    dropped_ids.push_back(fid);
    for (BlockId b : f->blocks()) {
      if (!removed.count(b) && !blocks_.at(b).fixed) kept.insert(b);
    }
  }

  // Removed blocks first, surviving ones after.
  std::map<BlockId, int> offset;
  int nr = 0;
  for (BlockId b : removed) {
    if (blocks_.at(b).fixed) continue;
    offset[b] = nr;
    nr += blocks_.at(b).dim();
  }
  int n = nr;
  for (BlockId b : kept) {
    offset[b] = n;
    n += blocks_.at(b).dim();
  }
  std::shared_ptr<const Factor> prior;
  const int ns = n - nr;
  if (ns > 0) {
    Eigen::MatrixXd H(n, n);
    Eigen::VectorXd g(n);
    const auto lookup = [this](const Factor& f) { return valuesOf(f); };
    linearize(dropped, lookup, offset, H, g);
    Eigen::MatrixXd lambda = H.bottomRightCorner(ns, ns);
    Eigen::VectorXd grad = g.tail(ns);
    if (nr > 0) {
      Eigen::MatrixXd Hrr = H.topLeftCorner(nr, nr);
      Hrr.diagonal().array() += kMinDamping;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(Hrr);
      const Eigen::MatrixXd Hrs = H.topRightCorner(nr, ns);
      lambda.noalias() -= Hrs.transpose() * ldlt.solve(Hrs);
      grad.noalias() -= Hrs.transpose() * ldlt.solve(g.head(nr));
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (lambda + lambda.transpose()));
    const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(kMinAnchorWeight);
    const Eigen::MatrixXd L = ev.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd e0 =
        ev.cwiseSqrt().cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * grad);
    std::vector<BlockId> ids(kept.begin(), kept.end());
    std::vector<VariableBlock> x0;
    for (BlockId b : ids) x0.push_back(blocks_.at(b));
    prior = std::make_shared<MarginalPriorFactor>(std::move(ids), std::move(x0), L, e0);
  }
  for (FactorId fid : dropped_ids) factors_.erase(fid);
  for (BlockId b : removed) blocks_.erase(b);
  if (prior) addFactor(prior);
}

}  // namespace mfuse
