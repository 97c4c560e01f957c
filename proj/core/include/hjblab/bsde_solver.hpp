#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "hjblab/control_problem.hpp"
#include "hjblab/forward_sim.hpp"
#include "hjblab/regression.hpp"

namespace hjblab {

/// Per-time diagnostics of the backward regression pass.
struct BsdeStepDiag {
  double t = 0.0;
  double y_mean = 0.0;
  std::vector<double> u_mean;  // per control: sample mean of U(a')
  double penalty_rate = 0.0;   // mean over paths of sum_a (U(a))_+ theta({a})
  double gap_rate = 0.0;       // mean over paths of sum_a (U(a))_+^2 theta({a})
  double max_condition = 1.0;
  std::vector<std::size_t> regime_samples;
};

/// Regression Monte Carlo estimate of the BSDE quadruple: Y_0 (a constant,
/// F_0-measurable), per-time Z estimates, per-time U diagnostics, and the
/// accumulated penalty process standing in for K.
struct BsdeSolution {
  std::vector<double> time_grid;
  double y0 = 0.0;
  double y0_standard_error = 0.0;
  std::vector<double> penalty_accumulator;   // K-proxy at each grid time, nondecreasing
  std::vector<Eigen::VectorXd> z_estimates;  // per step
  std::vector<BsdeStepDiag> diagnostics;     // per step, forward time order
  double beta = 0.0;
  int penalty_n = 0;
  double horizon = 0.0;
  std::size_t n_paths = 0;
};

/// Penalized elliptic BSDE truncated to [0, T_trunc] with zero terminal
/// data (truncation error decays like e^{-beta T}); backward induction with
/// one frozen-y inner sweep per step, the penalty evaluated at the previous
/// backward iterate, and U(a') read off the regression surface across
/// regimes. Y_0 estimates v^{beta,n}(x, a).
///
/// Preconditions: a in the control list; T_trunc >= log(1/truncation_tail)/beta;
/// n_paths >= 50 x basis size.
BsdeSolution solve_penalized_bsde(const ControlProblem& problem, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& a, double beta, int n, double t_trunc,
                                  double dt, std::size_t n_paths, const RegressionBasis& basis,
                                  std::uint64_t seed, double truncation_tail = 1e-3);

struct PenalizationPoint {
  int n = 0;
  double y0 = 0.0;
  double standard_error = 0.0;
};

/// Y_0 estimates along a strictly increasing penalty schedule, computed with
/// common random numbers so the monotone trend is visible through the MC
/// noise.
std::vector<PenalizationPoint> penalization_sweep(const ControlProblem& problem,
                                                  const Eigen::VectorXd& x,
                                                  const Eigen::VectorXd& a, double beta,
                                                  const std::vector<int>& n_list, double t_trunc,
                                                  double dt, std::size_t n_paths,
                                                  const RegressionBasis& basis,
                                                  std::uint64_t seed,
                                                  double truncation_tail = 1e-3);

/// Time-integrated sample average of sum_a (U(a))_+^2 theta({a}): the
/// violation of the nonpositive-jump constraint. Exactly 0 for singleton
/// control sets.
double jump_constraint_gap(const BsdeSolution& solution);

/// Finite-horizon penalized BSDE behind the parabolic representation:
/// backward from Y_T = h(X_T) with driver f(X, I, Y/(T-s+1)) plus the
/// penalty; Y_0 estimates v(T, x) at large n.
BsdeSolution solve_finite_horizon_bsde(const ControlProblem& problem, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& a, double horizon, int n, double dt,
                                       std::size_t n_paths, const RegressionBasis& basis,
                                       std::uint64_t seed);

/// Payoff of the dual (tilted-measure) bound: e^{int rho}(h - phi)(X_T)
/// plus int rho e^{int rho} (phi - lambda).
struct DualPayoffSpec {
  ScalarFieldFn terminal_gap;  // (h - phi)(x)
  ScalarFieldFn phi;
  double lambda = 0.0;
  std::function<double(double t, const Eigen::VectorXd& x)> rho;
};

/// Max over the tilt family of the tilted Monte Carlo payoff — a lower bound
/// on the sup over all intensity tilts. Family members keep their own
/// deterministic seeds, so enlarging the family never decreases the estimate.
double dual_bound_estimate(const ControlProblem& problem, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& a, const std::vector<TiltSpec>& tilt_family,
                           const DualPayoffSpec& payoff, double horizon, double dt,
                           std::size_t n_paths, std::uint64_t seed);

/// Per-time Y/U/condition diagnostics as CSV.
void export_bsde_diagnostics_csv(const BsdeSolution& solution, const std::filesystem::path& file);

}  // namespace hjblab
