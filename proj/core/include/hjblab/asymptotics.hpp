#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hjblab/control_problem.hpp"
#include "hjblab/pde_solver.hpp"
#include "hjblab/value_field.hpp"

namespace hjblab {

/// Long-time convergence data: (T, value, auxiliary) points plus a target
/// constant and the deviation of the tail point from it.
struct ConvergenceCurve {
  struct Point {
    double t = 0.0;
    double value = 0.0;
    double aux = 0.0;
    double se = 0.0;
  };
  std::vector<Point> points;
  double target = 0.0;
  double tail_deviation = 0.0;
};

/// v(T, x_probe)/T at the probe node (nearest the origin) along T_list, from
/// one parabolic solve up to max(T_list). aux carries the raw v(T, x_probe).
/// When lambda_ref is finite it becomes the curve target.
ConvergenceCurve long_run_average(const ControlProblem& problem, const Grid& grid,
                                  const std::vector<double>& t_list, double lambda_ref,
                                  double dt = 0.0,
                                  TimeStepping stepping = TimeStepping::explicit_euler);

/// The renormalized gap w(T,x) = v(T,x) - (lambda T + phi(x)) on the probe
/// compact |x|_inf <= probe_radius: value = sup |w|/(1+|x|), aux = the
/// oscillation max w - min w (tends to 0 exactly when the convergence
/// v(T,.) - (lambda T + phi) -> c holds). target = w at the probe node for
/// the largest T (the emerging constant c); tail_deviation = last
/// oscillation. The pair must live on `grid`.
ConvergenceCurve renormalized_gap(const ControlProblem& problem, const Grid& grid,
                                  const ErgodicPair& pair, const std::vector<double>& t_list,
                                  double probe_radius = 3.0, double dt = 0.0,
                                  TimeStepping stepping = TimeStepping::explicit_euler);

struct AverageEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Closed-loop Monte Carlo average (1/T) E int_0^T f(X_t, alpha(X_t)) dt
/// under the policy's nearest-node feedback, started at the origin. Requires
/// f independent of y (checked). Should match lambda for the extracted
/// feedback.
AverageEstimate verify_lambda_via_control(const ControlProblem& problem, const Policy& policy,
                                          double horizon, double dt, std::size_t n_paths,
                                          std::uint64_t seed);

/// Constant policy (one control index everywhere) for suboptimality checks.
Policy constant_policy(const Grid& grid, int control_index);

/// CSV export: T,value,aux,se.
void export_curve_csv(const ConvergenceCurve& curve, const std::filesystem::path& file);

}  // namespace hjblab
