#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "hjblab/grid.hpp"

namespace hjblab {

enum class FieldKind { parabolic, discounted, penalized };

/// Solve provenance attached to a ValueField.
struct SolveInfo {
  int iterations = 0;
  double final_residual = 0.0;
};

/// A grid-sampled value function: v (parabolic, tagged with horizon T),
/// v^beta (discounted) or v^{beta,n} (penalized).
struct ValueField {
  Grid grid;
  Eigen::VectorXd values;
  FieldKind kind = FieldKind::discounted;
  double horizon = 0.0;         // parabolic: T
  double beta = 0.0;            // discounted / penalized
  int penalty_level = 0;        // penalized: n
  SolveInfo info;
  // discounted kind: fitted C with |beta v(x)| <= C (1 + |x|) over the grid
  double fitted_growth_const = 0.0;

  double operator()(std::size_t node) const { return values[static_cast<Eigen::Index>(node)]; }
  bool all_finite() const { return values.allFinite(); }
};

/// The vanishing-discount limit pair: the constant lambda and the bias
/// function phi with phi(anchor) = 0 exactly.
struct ErgodicPair {
  double lambda = 0.0;
  ValueField phi;
  /// Max-norm residual of the ergodic equation over all interior nodes.
  double residual = 0.0;
  std::vector<double> beta_schedule;
  /// Diagnostics: lambda_beta per schedule entry, and any warnings raised
  /// (e.g. a non-monotone lambda_beta sequence).
  std::vector<double> lambda_betas;
  std::vector<std::string> warnings;
};

/// Feedback control on a grid: one control index per node.
struct Policy {
  Grid grid;
  std::vector<int> control_index;
};

}  // namespace hjblab
