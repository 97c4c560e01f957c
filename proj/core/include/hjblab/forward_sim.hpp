#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "hjblab/control_problem.hpp"

namespace hjblab {

/// Bounded intensity reweighting nu(t,a) in [1, n+1] defining the equivalent
/// measure P^nu (Girsanov tilt of the regime jumps only; W is unchanged).
struct TiltSpec {
  std::function<double(double t, const Eigen::VectorXd& a)> nu;
  int bound_n = 1;
};

/// Simulated regime-switching trajectories (X, I) on a uniform time grid.
///
/// Under a tilt the jumps are simulated at the tilted rate and `tilt_weight`
/// carries the exact per-step likelihood ratio back to the untilted measure,
/// so its sample mean is 1 at every grid time (martingale property) and
/// tilt-weighted averages estimate untilted expectations. Untilted ensembles
/// have weight identically 1.
class PathEnsemble {
 public:
  std::size_t n_paths() const { return n_paths_; }
  const std::vector<double>& time_grid() const { return time_grid_; }
  std::size_t n_times() const { return time_grid_.size(); }
  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  bool tilted() const { return tilted_; }
  int initial_control() const { return a0_index_; }

  double state(std::size_t path, std::size_t time, int component) const {
    return states_[(path * time_grid_.size() + time) * static_cast<std::size_t>(dim_) +
                   static_cast<std::size_t>(component)];
  }
  Eigen::VectorXd state_vector(std::size_t path, std::size_t time) const;
  int regime(std::size_t path, std::size_t time) const {
    return regimes_[path * time_grid_.size() + time];
  }
  double tilt_weight(std::size_t path, std::size_t time) const {
    return tilted_ ? weights_[path * time_grid_.size() + time] : 1.0;
  }
  /// (jump time, new control index) per path, in time order.
  const std::vector<std::pair<double, int>>& jump_log(std::size_t path) const {
    return jump_logs_[path];
  }
  /// Grid index of a time point; rejects off-grid times.
  std::size_t time_index(double t) const;

 private:
  friend PathEnsemble simulate_paths(const ControlProblem&, const Eigen::VectorXd&,
                                     const Eigen::VectorXd&, double, double, std::size_t,
                                     const std::optional<TiltSpec>&, std::uint64_t);
  std::size_t n_paths_ = 0;
  int dim_ = 0;
  int a0_index_ = 0;
  bool tilted_ = false;
  std::uint64_t seed_ = 0;
  std::vector<double> time_grid_;
  std::vector<double> states_;   // [path][time][component]
  std::vector<int> regimes_;     // [path][time]
  std::vector<double> weights_;  // [path][time], empty when untilted
  std::vector<std::vector<std::pair<double, int>>> jump_logs_;
};

/// Weighted sample of R^d with normalized weights.
struct EmpiricalMeasure {
  Eigen::MatrixXd samples;  // n x d
  Eigen::VectorXd weights;  // sums to 1
  Eigen::VectorXd mean;
  double second_moment = 0.0;

  double integrate(const std::function<double(const Eigen::VectorXd&)>& test) const;
  Eigen::VectorXd variance_diagonal() const;
};

struct MomentEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

struct ContractionPoint {
  double t = 0.0;
  double coupled_second_moment = 0.0;
  double standard_error = 0.0;
};

/// Euler-Maruyama for X with per-step regime-jump thinning (at most one jump
/// per step; per-step jump probability 1 - exp(-Lambda dt)). Deterministic
/// given the seed; path k draws from an engine seeded with seed xor k.
PathEnsemble simulate_paths(const ControlProblem& problem, const Eigen::VectorXd& x0,
                            const Eigen::VectorXd& a0, double dt, double horizon,
                            std::size_t n_paths, const std::optional<TiltSpec>& tilt,
                            std::uint64_t seed);

/// Tilt-weighted mean of |X_t|^2 across paths, with standard error.
MomentEstimate estimate_second_moment(const PathEnsemble& ensemble, double t);

/// Synchronous coupling: trajectories from x and x' driven by the same
/// Brownian increments and the same regime jumps. Returns E|X_t - X_t'|^2
/// estimates at the requested times.
std::vector<ContractionPoint> estimate_contraction(const ControlProblem& problem,
                                                   const Eigen::VectorXd& x,
                                                   const Eigen::VectorXd& x_prime,
                                                   const Eigen::VectorXd& a, double dt,
                                                   const std::vector<double>& ts,
                                                   std::size_t n_paths, std::uint64_t seed);

/// Least-squares slope of log E|dX_t|^2 against t; compare to -2 gamma.
double fitted_contraction_slope(const std::vector<ContractionPoint>& points);

/// Long-run samples of the closed-loop diffusion under a feedback control
/// (control index per state). Burn-in then thinned collection along one
/// trajectory; aborts if |X| exceeds the blow-up radius.
EmpiricalMeasure estimate_invariant_measure(const ControlProblem& problem,
                                            const std::function<int(const Eigen::VectorXd&)>& feedback,
                                            double burn_in, std::size_t n_samples, double dt,
                                            std::size_t thinning, std::uint64_t seed,
                                            double blow_up_radius = 1e6);

/// CSV exports: columns path,t,x0..x{d-1},regime,tilt_weight and
/// path,jump_time,new_control.
void export_paths_csv(const PathEnsemble& ensemble, const std::filesystem::path& file);
void export_jumps_csv(const PathEnsemble& ensemble, const std::filesystem::path& file);

}  // namespace hjblab
