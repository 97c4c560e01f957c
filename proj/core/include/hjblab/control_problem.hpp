#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace hjblab {

using DriftFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& a)>;
using DiffusionFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& x, const Eigen::VectorXd& a)>;
using RunningCostFn = std::function<double(const Eigen::VectorXd& x, const Eigen::VectorXd& a, double y)>;
using ScalarFieldFn = std::function<double(const Eigen::VectorXd& x)>;

/// A control problem: dissipative controlled diffusion with a finite control
/// set, running cost f(x,a,y) nonincreasing in y, and Lipschitz initial data
/// h for the parabolic equation. The jump intensity is the uniform measure on
/// the control list with total mass `intensity_total`.
///
/// Immutable after construction and safe to share read-only across workers.
/// Coefficient functions must be pure; that is a documented contract, not
/// enforced.
struct ControlProblem {
  int dim_x = 1;
  std::vector<Eigen::VectorXd> controls;
  DriftFn drift;
  DiffusionFn diffusion;
  RunningCostFn running_cost;
  ScalarFieldFn data_h;
  double gamma = 0.0;        // dissipativity constant
  double lip_b_sigma = 0.0;  // L1
  double lip_f = 0.0;        // L2
  std::optional<double> kappa;  // strict decay constant; absent means f1 == 0
  double intensity_total = 1.0;
  /// Whether f actually reads its y argument. Solvers precompute f tables
  /// when it does not; set by the builders and the config loader.
  bool cost_depends_on_y = true;

  std::size_t n_controls() const { return controls.size(); }
  /// theta({a}) under the uniform intensity measure.
  double control_rate() const { return intensity_total / static_cast<double>(controls.size()); }

  /// Structural checks (nonempty duplicate-free controls, positive constants,
  /// callable coefficients). Throws std::invalid_argument.
  void check_structure() const;
};

struct AssumptionCheck {
  bool pass = false;
  double worst_margin = 0.0;  // smallest sampled slack; negative means violated
};

/// Sampling-based verdicts for every standing assumption. Failures are
/// reported, never thrown.
struct ValidationReport {
  AssumptionCheck lipschitz_b_sigma;  // (H1)(i)
  AssumptionCheck dissipativity;      // (H1)(ii)
  AssumptionCheck lipschitz_f;        // (H2)(i)
  AssumptionCheck monotone_f;         // (H2)(ii)
  AssumptionCheck strict_decay;       // (H3)
  int sample_count = 0;

  bool all_pass() const {
    return lipschitz_b_sigma.pass && dissipativity.pass && lipschitz_f.pass &&
           monotone_f.pass && strict_decay.pass;
  }
};

/// Coefficients of the controlled Ornstein-Uhlenbeck family:
/// b(x,a) = B(a) x + D(a), sigma(x,a) = Sigma(a).
struct OuCoefficients {
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& a)> mean_reversion;  // B
  std::function<Eigen::VectorXd(const Eigen::VectorXd& a)> drift_level;     // D
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& a)> volatility;      // Sigma
};

/// Builds an OU problem after checking uniform stability of B on the control
/// list: x . B(a) x <= -gamma |x|^2 on sampled directions. Throws
/// std::invalid_argument if the stability margin is violated anywhere.
/// L1 is derived from the coefficients over the default sampling box.
ControlProblem make_ou_problem(const OuCoefficients& coeffs,
                               std::vector<Eigen::VectorXd> controls, double gamma,
                               RunningCostFn cost, ScalarFieldFn data_h,
                               bool cost_depends_on_y, double lip_f,
                               std::optional<double> kappa = std::nullopt,
                               double intensity_total = 1.0);

/// Samples (x, x', a, y, y') quasi-uniformly in the box [-box_radius,
/// box_radius]^d and the control list, and records the worst margin for each
/// assumption. Deterministic under a fixed seed.
ValidationReport validate_problem(const ControlProblem& problem, int n_samples,
                                  double box_radius, std::uint64_t seed,
                                  double tolerance = 1e-8);

/// [(x-x') . (b(x,a)-b(x',a)) + 1/2 ||sigma(x,a)-sigma(x',a)||^2] / |x-x'|^2.
/// At most -gamma for a valid problem. Rejects x == x'.
double dissipativity_margin(const ControlProblem& problem, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& x_prime, const Eigen::VectorXd& a);

}  // namespace hjblab
