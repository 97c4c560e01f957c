#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "hjblab/control_problem.hpp"
#include "hjblab/grid.hpp"
#include "hjblab/value_field.hpp"

namespace hjblab {

/// Discrete generator L^a_h applied to a grid field at one node.
///
/// First-order term: centered difference wherever the resulting neighbor
/// weights stay nonnegative (sigma sigma^T_ii >= h |b_i| after the
/// cross-term allocation), first-order upwind otherwise, so the scheme is
/// monotone everywhere and second-order where diffusion dominates. Second
/// order term: centered differences; cross-derivatives (d = 2) use the
/// monotone wide-stencil split and abort if diagonal dominance of
/// sigma sigma^T fails. At boundary nodes the one-sided closure (inward
/// drift difference, diffusion dropped) is applied; raises MonotonicityError
/// if the drift points out of the grid there.
double discrete_generator_apply(const ControlProblem& problem, const Grid& grid,
                                const Eigen::VectorXd& field_values, const Eigen::VectorXd& a,
                                std::size_t node);

/// Howard policy iteration for
///   beta v - sup_a [ L^a v + f(x, a, beta v) ] = 0
/// on the truncated grid. Policy improvement takes the argmax over the
/// control list (ties to the lowest index); policy evaluation solves the
/// linearized system with the y-argument frozen at the previous sweep.
/// Stops when the max-norm residual of the full equation is <= tol.
ValueField solve_discounted(const ControlProblem& problem, const Grid& grid, double beta,
                            double tol = 1e-9, int max_iter = 100);

enum class TimeStepping { explicit_euler, implicit_euler };

/// Forward march of the parabolic equation
///   dv/dT = sup_a [ L^a v + f(x, a, v/(T+1)) ],  v(0,.) = h,
/// recording fields at the requested horizons. dt <= 0 selects the largest
/// stable step automatically; an explicit dt violating the monotone CFL
/// bound is rejected. Implicit mode reuses the policy-iteration machinery
/// per step with the y-argument frozen at the previous time level.
std::vector<ValueField> solve_parabolic(const ControlProblem& problem, const Grid& grid,
                                        double t_max, double dt,
                                        const std::vector<double>& record_times,
                                        TimeStepping stepping = TimeStepping::explicit_euler);

/// Largest dt satisfying the explicit monotone CFL bound on this grid,
/// the tighter of h^2/(d max||sigma sigma^T|| + h max|b|) and the exact
/// assembled-diagonal bound.
double explicit_cfl_dt(const ControlProblem& problem, const Grid& grid);

/// Vanishing-discount construction of the ergodic pair: solves the
/// discounted equation along the schedule, sets lambda_beta = beta v^beta(0)
/// and phi^beta = v^beta - v^beta(0), and extrapolates both to beta -> 0
/// with a least-squares linear fit over the last three schedule points
/// (phi pointwise, then re-anchored to exactly 0 at the node nearest the
/// origin). Records lambda_beta diagnostics, warnings for a non-monotone
/// lambda_beta trend, and the full-interior ergodic residual.
ErgodicPair solve_ergodic_vanishing_discount(const ControlProblem& problem, const Grid& grid,
                                             const std::vector<double>& beta_schedule,
                                             double tol = 1e-9);

/// Max over interior nodes of |lambda - sup_a [ L^a_h phi + f(x, a, lambda) ]|.
double ergodic_residual(const ControlProblem& problem, const Grid& grid,
                        const ErgodicPair& pair);

/// Same residual restricted to nodes with |x|_inf <= radius (assertions on
/// the ergodic pair live on a probe compact).
double ergodic_residual_within(const ControlProblem& problem, const Grid& grid,
                               const ErgodicPair& pair, double radius);

/// Per-node argmax control of [ L^a_h phi + f(x, a, lambda) ], ties to the
/// lowest control index.
Policy extract_feedback(const ControlProblem& problem, const Grid& grid,
                        const ErgodicPair& pair);

/// Nearest-node feedback lookup for closed-loop simulation.
inline std::function<int(const Eigen::VectorXd&)> nearest_node_feedback(const Policy& policy) {
  return [policy](const Eigen::VectorXd& x) {
    return policy.control_index[policy.grid.nearest_node(x)];
  };
}

/// Max adjacent-node difference quotient |v_i - v_j| / h (discrete Lipschitz
/// constant of the field).
double max_difference_quotient(const ValueField& field);

/// Max over nodes of |beta v(x)| / (1 + |x|) — the fitted linear-growth
/// constant of a discounted field.
double fitted_growth_constant(const ValueField& field);

/// CSV export (node coordinates, value) plus a flat key=value metadata
/// sidecar (kind, beta or T, residual, iterations, h, bounds).
void export_field_csv(const ValueField& field, const std::filesystem::path& csv_file,
                      const std::filesystem::path& meta_file);

}  // namespace hjblab
