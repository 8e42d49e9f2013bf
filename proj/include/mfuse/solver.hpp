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

#ifndef MFUSE_SOLVER_HPP_
#define MFUSE_SOLVER_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "mfuse/geometry.hpp"

namespace mfuse {

using BlockId = std::uint64_t;
using FactorId = std::uint64_t;

enum class BlockKind { Rotation, Vector };

/// A manifold variable. Rotation blocks live on SO(3) with a 3-dimensional
/// tangent space; vector blocks are plain Euclidean.
struct VariableBlock {
  BlockKind kind = BlockKind::Vector;
  UnitQuaternion rotation;
  Eigen::VectorXd vector;
  bool fixed = false;

  static VariableBlock makeRotation(const UnitQuaternion& q);
  static VariableBlock makeVector(const Eigen::VectorXd& v);

  int dim() const { return kind == BlockKind::Rotation ? 3 : static_cast<int>(vector.size()); }
  /// boxplus for rotations, addition for vectors.
  void retract(const Eigen::Ref<const Eigen::VectorXd>& delta);
  Vec3 vec3() const { return vector.head<3>(); }
};

/// A residual term over a fixed list of blocks. Residuals are already
/// weighted: the factor's cost contribution is the squared norm.
class Factor {
 public:
  explicit Factor(std::vector<BlockId> blocks) : blocks_(std::move(blocks)) {}
  virtual ~Factor() = default;

  const std::vector<BlockId>& blocks() const { return blocks_; }
  virtual int residualDim() const = 0;
  /// Fills the weighted residual and, if requested, one Jacobian per block
  /// (residualDim x block tangent dim) with respect to right-perturbations.
  virtual void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                        std::vector<Eigen::MatrixXd>* jacobians) const = 0;

 private:
  std::vector<BlockId> blocks_;
};

/// Analytic Jacobians at the given values.
std::vector<Eigen::MatrixXd> jacobians(const Factor& f,
                                       const std::vector<const VariableBlock*>& values);
/// Central finite differences through the block retraction.
std::vector<Eigen::MatrixXd> numericalJacobians(const Factor& f,
                                                const std::vector<const VariableBlock*>& values,
                                                double step = 1e-6);

/// sqrt(w) * (x - x0) per component.
class VectorPriorFactor : public Factor {
 public:
  VectorPriorFactor(BlockId id, Eigen::VectorXd target, Eigen::VectorXd weights);
  int residualDim() const override { return static_cast<int>(target_.size()); }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::VectorXd target_;
  Eigen::VectorXd sqrt_w_;
};

/// sqrt(w) * Log(q0^-1 q) per component.
class RotationPriorFactor : public Factor {
 public:
  RotationPriorFactor(BlockId id, const UnitQuaternion& target, const Vec3& weights);
  int residualDim() const override { return 3; }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  UnitQuaternion target_;
  Vec3 sqrt_w_;
};

/// Dense Gaussian prior over several blocks, r = L * (x [-] x0) + e0, where
/// [-] is boxminus for rotations and subtraction for vectors.
class MarginalPriorFactor : public Factor {
 public:
  MarginalPriorFactor(std::vector<BlockId> blocks, std::vector<VariableBlock> linearization,
                      Eigen::MatrixXd sqrt_information, Eigen::VectorXd offset);
  int residualDim() const override { return static_cast<int>(offset_.size()); }
  void evaluate(const std::vector<const VariableBlock*>& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  std::vector<VariableBlock> x0_;
  Eigen::MatrixXd L_;
  Eigen::VectorXd offset_;
};

struct LmOptions {
  int max_iterations = 20;
  /// Stop when the relative cost decrease of an accepted step falls below this.
  double tolerance = 1e-10;
  double initial_lambda = 1e-4;
  int max_retries = 10;
};

struct OptimizeResult {
  bool converged = false;
  /// No acceptable step from the starting point; values are left untouched.
  bool diverged = false;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> cost_history;
};

/// Factor graph with blocks keyed by id and optional timestamped states for
/// fixed-lag management.
class Graph {
 public:
  explicit Graph(double lag = 0.5) : lag_(lag) {}

  double lag() const { return lag_; }
  void setLag(double lag) { lag_ = lag; }

  void addBlock(BlockId id, VariableBlock block);
  bool hasBlock(BlockId id) const { return blocks_.count(id) > 0; }
  const VariableBlock& block(BlockId id) const;
  VariableBlock& block(BlockId id);
  void setFixed(BlockId id, bool fixed) { block(id).fixed = fixed; }
  const std::map<BlockId, VariableBlock>& blocks() const { return blocks_; }

  /// Throws if the factor references an unknown block.
  FactorId addFactor(std::shared_ptr<const Factor> factor);
  void removeFactor(FactorId id);
  const std::map<FactorId, std::shared_ptr<const Factor>>& factors() const { return factors_; }
  std::size_t factorCount() const { return factors_.size(); }

  /// Groups blocks into a state at a timestamp (used by marginalizeToLag).
  void addState(double stamp, std::vector<BlockId> blocks);
  const std::map<double, std::vector<BlockId>>& states() const { return states_; }

  double cost() const;
  OptimizeResult optimize(const LmOptions& options = {});

  /// Removes states older than now - lag with their blocks and every factor
  /// touching them. The information those factors carried about the
  /// surviving blocks (normally the oldest surviving state) is kept as one
  /// dense prior, linearized at the current values (Schur complement).
  void marginalizeToLag(double now);

  /// Eigenvalue floor of marginal priors.
  static constexpr double kMinAnchorWeight = 1e-6;

 private:
  std::vector<const VariableBlock*> valuesOf(const Factor& f) const;

  double lag_;
  std::map<BlockId, VariableBlock> blocks_;
  std::map<FactorId, std::shared_ptr<const Factor>> factors_;
  std::map<double, std::vector<BlockId>> states_;
  FactorId next_factor_ = 0;
};

}  // namespace mfuse

#endif  // MFUSE_SOLVER_HPP_
