#include "hjblab/asymptotics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "hjblab/csv.hpp"
#include "hjblab/errors.hpp"
#include "hjblab/parallel.hpp"
#include "hjblab/rng.hpp"

namespace hjblab {

ConvergenceCurve long_run_average(const ControlProblem& problem, const Grid& grid,
                                  const std::vector<double>& t_list, double lambda_ref, double dt,
                                  TimeStepping stepping) {
  if (t_list.empty()) throw std::invalid_argument("long_run_average: empty T list");
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    if (!(t_list[i] > 0.0)) throw std::invalid_argument("long_run_average: T must be positive");
    if (i > 0 && !(t_list[i] > t_list[i - 1]))
      throw std::invalid_argument("long_run_average: T list must be increasing");
  }
  const auto fields = solve_parabolic(problem, grid, t_list.back(), dt, t_list, stepping);
  const std::size_t probe = grid.anchor_node();

  ConvergenceCurve curve;
  for (const auto& f : fields) {
    const double v = f.values[static_cast<Eigen::Index>(probe)];
    curve.points.push_back({f.horizon, v / f.horizon, v, 0.0});
  }
  curve.target = lambda_ref;
  curve.tail_deviation = std::isfinite(lambda_ref)
                             ? std::abs(curve.points.back().value - lambda_ref)
                             : std::numeric_limits<double>::quiet_NaN();
  return curve;
}

ConvergenceCurve renormalized_gap(const ControlProblem& problem, const Grid& grid,
                                  const ErgodicPair& pair, const std::vector<double>& t_list,
                                  double probe_radius, double dt, TimeStepping stepping) {
  if (pair.phi.values.size() != static_cast<Eigen::Index>(grid.size()))
    throw std::invalid_argument("renormalized_gap: pair does not live on this grid");
  if (t_list.empty()) throw std::invalid_argument("renormalized_gap: empty T list");

  std::vector<std::size_t> probe_nodes;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid.node(i).lpNorm<Eigen::Infinity>() <= probe_radius + 1e-12) probe_nodes.push_back(i);
  if (probe_nodes.empty())
    throw std::invalid_argument("renormalized_gap: probe compact contains no grid node");

  const auto fields = solve_parabolic(problem, grid, t_list.back(), dt, t_list, stepping);
  const std::size_t anchor = grid.anchor_node();

  ConvergenceCurve curve;
  for (const auto& f : fields) {
    double sup_ratio = 0.0;
    double wmin = std::numeric_limits<double>::infinity();
    double wmax = -wmin;
    for (std::size_t i : probe_nodes) {
      const double w = f.values[static_cast<Eigen::Index>(i)] - pair.lambda * f.horizon -
                       pair.phi.values[static_cast<Eigen::Index>(i)];
      sup_ratio = std::max(sup_ratio, std::abs(w) / (1.0 + grid.node(i).norm()));
      wmin = std::min(wmin, w);
      wmax = std::max(wmax, w);
    }
    curve.points.push_back({f.horizon, sup_ratio, wmax - wmin, 0.0});
    if (&f == &fields.back())
      curve.target = f.values[static_cast<Eigen::Index>(anchor)] - pair.lambda * f.horizon -
                     pair.phi.values[static_cast<Eigen::Index>(anchor)];
  }
  curve.tail_deviation = curve.points.back().aux;
  return curve;
}

AverageEstimate verify_lambda_via_control(const ControlProblem& problem, const Policy& policy,
                                          double horizon, double dt, std::size_t n_paths,
                                          std::uint64_t seed) {
  if (!(horizon > 0.0) || !(dt > 0.0))
    throw std::invalid_argument("verify_lambda_via_control: horizon and dt must be positive");
  if (n_paths == 0) throw std::invalid_argument("verify_lambda_via_control: n_paths >= 1");
  // the interpretation as an ergodic control value needs f = f(x,a)
  if (problem.cost_depends_on_y)
    throw std::invalid_argument("verify_lambda_via_control: running cost must not depend on y");
  {
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(problem.dim_x);
    for (const auto& a : problem.controls)
      if (std::abs(problem.running_cost(x, a, 0.0) - problem.running_cost(x, a, 1.0)) > 1e-12)
        throw std::invalid_argument("verify_lambda_via_control: running cost reads y");
  }

  const auto feedback = nearest_node_feedback(policy);
  const std::size_t n_steps = static_cast<std::size_t>(std::llround(horizon / dt));
  const int d = problem.dim_x;

  std::vector<double> averages(n_paths, 0.0);
  parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      auto eng = path_engine(seed, p);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Eigen::VectorXd x = Eigen::VectorXd::Zero(d), xi(d);
      double acc = 0.0;
      for (std::size_t m = 0; m < n_steps; ++m) {
        const int j = feedback(x);
        const Eigen::VectorXd& a = problem.controls[static_cast<std::size_t>(j)];
        acc += problem.running_cost(x, a, 0.0) * dt;
        for (int c = 0; c < d; ++c) xi[c] = gauss(eng);
        x += problem.drift(x, a) * dt + problem.diffusion(x, a) * (std::sqrt(dt) * xi);
        if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > 1e6)
          throw SolverError("verify_lambda_via_control: closed-loop trajectory diverged");
      }
      averages[p] = acc / horizon;
    }
  });

  double mean = 0.0;
  for (double v : averages) mean += v;
  mean /= static_cast<double>(n_paths);
  double var = 0.0;
  for (double v : averages) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n_paths);
  return {mean, std::sqrt(var / static_cast<double>(n_paths))};
}

Policy constant_policy(const Grid& grid, int control_index) {
  Policy p;
  p.grid = grid;
  p.control_index.assign(grid.size(), control_index);
  return p;
}

void export_curve_csv(const ConvergenceCurve& curve, const std::filesystem::path& file) {
  CsvWriter csv(file, {"T", "value", "aux", "se"});
  for (const auto& pt : curve.points) csv.write_row(std::vector<double>{pt.t, pt.value, pt.aux, pt.se});
}

}  // namespace hjblab
