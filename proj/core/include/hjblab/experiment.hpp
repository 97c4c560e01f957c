#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hjblab/control_problem.hpp"
#include "hjblab/grid.hpp"
#include "hjblab/pde_solver.hpp"
#include "hjblab/regression.hpp"

namespace hjblab {

struct ValidateParams {
  int n_samples = 10000;
  double box_radius = 10.0;
};

struct ContractionParams {
  Eigen::VectorXd x, x_prime;
  double dt = 1e-3;
  std::size_t n_paths = 10000;
  std::vector<double> ts;
};

struct InvariantParams {
  double burn_in = 10.0;
  std::size_t n_samples = 20000;
  double dt = 0.01;
  std::size_t thinning = 100;
  int control_index = 0;
};

struct SimulateParams {
  std::size_t n_paths = 100;
  double dt = 0.01;
  double horizon = 10.0;
  bool export_paths = true;
  double tilt_nu = 2.0;
  int tilt_bound_n = 2;
  std::size_t tilt_paths = 4000;
  std::optional<ContractionParams> contraction;
  std::optional<InvariantParams> invariant;
};

struct ParabolicParams {
  double h = 0.02;
  double t_max = 50.0;
  std::vector<double> record_times;
  double dt = 0.0;  // 0: automatic CFL step
  TimeStepping stepping = TimeStepping::explicit_euler;
};

struct PdeParams {
  std::vector<std::pair<double, double>> bounds;
  double h = 0.01;
  BoundaryPolicy boundary = BoundaryPolicy::one_sided_extrapolation;
  std::vector<double> beta_schedule;
  double tol = 1e-9;
  int max_iter = 200;
  ParabolicParams parabolic;
};

struct BsdeParams {
  Eigen::VectorXd x0;
  int a0_index = 0;
  double beta = 0.5;
  double t_trunc = 14.0;
  double dt = 0.02;
  std::size_t n_paths = 10000;
  std::vector<int> n_list{0, 2, 10, 50};
  RegressionBasis basis;
};

struct ClosedLoopParams {
  double horizon = 100.0;
  double dt = 0.01;
  std::size_t n_paths = 200;
};

struct AsymptoticsParams {
  std::vector<double> t_list;
  double probe_radius = 3.0;
  ClosedLoopParams closed_loop;
};

/// Tolerances asserted by the run (exit code 4 when violated). Optional
/// reference values come from closed forms or pinned fine-grid runs.
struct AssertionParams {
  std::optional<double> lambda_ref;
  double lambda_routes_rel = 0.05;
  double bsde_vs_pde_rel = 0.05;
  double ergodic_residual_core = 0.05;
  double contraction_slope_rel = 0.10;
  double invariant_var_rel = 0.05;
  std::optional<double> invariant_var_ref;
  std::optional<Eigen::VectorXd> invariant_mean_ref;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned workers = 0;
  std::string out_dir = "out";
  std::vector<std::string> experiments;  // subset of the pipeline stages
  ControlProblem problem;
  ValidateParams validate;
  SimulateParams simulate;
  PdeParams pde;
  BsdeParams bsde;
  AsymptoticsParams asymptotics;
  AssertionParams assertions;
  std::string canonical_text;  // canonicalized resolved config
  std::uint64_t config_hash = 0;
};

struct ExperimentStatus {
  std::string name;
  bool passed = true;
  std::string note;
};

struct RunReport {
  std::vector<ExperimentStatus> experiments;
  std::map<std::string, double> headline;
  double wall_clock_seconds = 0.0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> artifacts;

  bool all_passed() const {
    for (const auto& e : experiments)
      if (!e.passed) return false;
    return true;
  }
};

struct RunOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::vector<std::string>> experiments;
};

/// Parse and validate a run configuration (JSON). Overrides are applied
/// before canonicalization, so the recorded config hash covers the resolved
/// run. Throws ConfigError naming the offending field.
RunConfig load_config_text(const std::string& json_text, const RunOverrides& overrides = {});

/// As above; the path "builtin:NAME" resolves from the builtin catalog.
RunConfig load_config_file(const std::filesystem::path& path, const RunOverrides& overrides = {});

/// Executes the selected stages in pipeline order (validate -> simulate ->
/// pde -> bsde -> asymptotics), writes CSV artifacts, run_report.json and the
/// flat report.kv under out_dir, and returns the report. Solver failures
/// throw; tolerance failures are recorded in the report.
RunReport run_experiment(const RunConfig& config);

/// Builtin problem instances (full run configurations).
std::vector<std::string> builtin_names();
std::string builtin_config_text(const std::string& name);
/// Catalog text: one line per builtin with provenance and reference values,
/// stable ordering.
std::string list_builtins();

}  // namespace hjblab
