#include "hjblab/bsde_solver.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "hjblab/csv.hpp"
#include "hjblab/errors.hpp"
#include "hjblab/parallel.hpp"
#include "hjblab/rng.hpp"

namespace hjblab {

namespace {

int find_control_index(const ControlProblem& problem, const Eigen::VectorXd& a) {
  for (std::size_t j = 0; j < problem.controls.size(); ++j)
    if (problem.controls[j].size() == a.size() &&
        (problem.controls[j] - a).lpNorm<Eigen::Infinity>() <= 1e-12)
      return static_cast<int>(j);
  throw std::invalid_argument("start control a is not in the control list");
}

// forward sweep storing X, I and the Brownian increments (the Z estimator
// regresses against them)
struct ForwardStore {
  std::size_t n_paths = 0;
  std::size_t n_times = 0;  // steps + 1
  int dim = 0;
  std::vector<double> x;   // [path][time][dim]
  std::vector<int> regime; // [path][time]
  std::vector<double> dw;  // [path][step][dim]

  double state(std::size_t p, std::size_t k, int c) const {
    return x[(p * n_times + k) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)];
  }
};

ForwardStore simulate_forward(const ControlProblem& problem, const Eigen::VectorXd& x0,
                              int a0_index, double dt, std::size_t n_steps, std::size_t n_paths,
                              std::uint64_t seed) {
  const int d = problem.dim_x;
  const std::size_t n_times = n_steps + 1;
  const double bytes = static_cast<double>(n_paths) * static_cast<double>(n_times) *
                       static_cast<double>(d) * 16.0;
  if (bytes > 4e9) throw std::invalid_argument("bsde forward store would exceed 4 GB");

  ForwardStore fs;
  fs.n_paths = n_paths;
  fs.n_times = n_times;
  fs.dim = d;
  fs.x.resize(n_paths * n_times * static_cast<std::size_t>(d));
  fs.regime.resize(n_paths * n_times);
  fs.dw.resize(n_paths * n_steps * static_cast<std::size_t>(d));

  const std::size_t n_controls = problem.n_controls();
  const double theta_each = problem.control_rate();
  const double p_jump = -std::expm1(-problem.intensity_total * dt);
  const double sqdt = std::sqrt(dt);

  parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      auto eng = path_engine(seed, p);
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::uniform_real_distribution<double> unif(0.0, 1.0);

      Eigen::VectorXd xv = x0, xi(d);
      int regime = a0_index;
      for (int c = 0; c < d; ++c)
        fs.x[(p * n_times) * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = xv[c];
      fs.regime[p * n_times] = regime;

      for (std::size_t m = 0; m < n_steps; ++m) {
        const Eigen::VectorXd& a = problem.controls[static_cast<std::size_t>(regime)];
        for (int c = 0; c < d; ++c) {
          xi[c] = gauss(eng);
          fs.dw[(p * n_steps + m) * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] =
              sqdt * xi[c];
        }
        xv += problem.drift(xv, a) * dt + problem.diffusion(xv, a) * (sqdt * xi);
        if (!xv.allFinite() || xv.lpNorm<Eigen::Infinity>() > 1e6)
          throw SolverError("bsde forward simulation diverged");
        if (unif(eng) < p_jump && n_controls > 1) {
          const double u = unif(eng) * problem.intensity_total;
          double acc = 0.0;
          for (std::size_t j = 0; j < n_controls; ++j) {
            acc += theta_each;
            if (u < acc) {
              regime = static_cast<int>(j);
              break;
            }
          }
        }
        const std::size_t base = (p * n_times + m + 1) * static_cast<std::size_t>(d);
        for (int c = 0; c < d; ++c) fs.x[base + static_cast<std::size_t>(c)] = xv[c];
        fs.regime[p * n_times + m + 1] = regime;
      }
    }
  });
  return fs;
}

struct BackwardMode {
  bool discounted = true;  // discounted: -beta Y + f(x,i,beta Y); else f(x,i,Y/(T-s+1))
  double beta = 0.0;
  bool terminal_h = false;
};

// backward recursion on one block of paths; blocks are statistically
// independent, which gives an honest Y_0 standard error including the
// regression noise
struct BlockResult {
  double y0 = 0.0;
  std::vector<double> pen_rates;              // per step
  std::vector<double> gap_rates;              // per step
  std::vector<double> y_means;                // per step
  std::vector<std::vector<double>> u_means;   // per step, per control
  std::vector<double> max_conditions;         // per step
  std::vector<Eigen::VectorXd> z;             // per step
};

BlockResult block_backward(const ControlProblem& problem, const ForwardStore& fs,
                           std::size_t p_begin, std::size_t p_end, const BackwardMode& mode,
                           int penalty_n, double horizon, double dt,
                           const RegressionBasis& basis) {
  const std::size_t n_steps = fs.n_times - 1;
  const std::size_t n_block = p_end - p_begin;
  const std::size_t nj = problem.n_controls();
  const double theta_each = problem.control_rate();
  const int d = fs.dim;

  BlockResult res;
  res.pen_rates.assign(n_steps, 0.0);
  res.gap_rates.assign(n_steps, 0.0);
  res.y_means.assign(n_steps, 0.0);
  res.u_means.assign(n_steps, std::vector<double>(nj, 0.0));
  res.max_conditions.assign(n_steps, 1.0);
  res.z.assign(n_steps, Eigen::VectorXd::Zero(d));

  Eigen::VectorXd y_next(static_cast<Eigen::Index>(n_block));
  Eigen::VectorXd y_curr(static_cast<Eigen::Index>(n_block));
  Eigen::MatrixXd xk(static_cast<Eigen::Index>(n_block), d);
  std::vector<int> regimes(n_block);

  if (mode.terminal_h) {
    Eigen::VectorXd xv(d);
    for (std::size_t q = 0; q < n_block; ++q) {
      for (int c = 0; c < d; ++c) xv[c] = fs.state(p_begin + q, n_steps, c);
      y_next[static_cast<Eigen::Index>(q)] = problem.data_h(xv);
    }
  } else {
    y_next.setZero();
  }

  bool have_prev_surface = false;
  FittedSurface prev_surface;

  for (std::size_t k = n_steps; k-- > 0;) {
    const double t = dt * static_cast<double>(k);
    for (std::size_t q = 0; q < n_block; ++q) {
      for (int c = 0; c < d; ++c) xk(static_cast<Eigen::Index>(q), c) = fs.state(p_begin + q, k, c);
      regimes[q] = fs.regime[(p_begin + q) * fs.n_times + k];
    }

    // Conditional expectation of the previous backward iterate. At k = 0 all
    // paths sit at (x0, a0): F_0 conditioning is the plain average and the
    // jump term reads off the k = 1 surface.
    const bool at_origin = k == 0;
    FittedSurface surface;
    double mean_next = 0.0;
    if (at_origin) {
      mean_next = y_next.mean();
    } else {
      surface = fit_surface(basis, xk, regimes, y_next, nj);
      res.max_conditions[k] = surface.max_condition();
    }
    const FittedSurface* u_surface = at_origin ? (have_prev_surface ? &prev_surface : nullptr)
                                               : &surface;

    double pen_rate = 0.0, gap_rate = 0.0, y_sum = 0.0;
    Eigen::VectorXd xv(d);
    std::vector<double> levels(nj);
    for (std::size_t q = 0; q < n_block; ++q) {
      xv = xk.row(static_cast<Eigen::Index>(q)).transpose();
      const int reg = regimes[q];
      const double e = at_origin ? mean_next : surface.eval(xv, reg);

      // one-step value of sitting at (x, a_j): conditional expectation plus
      // that regime's own driver increment, the y-argument frozen at the
      // regressed surface
      const auto driver = [&](const Eigen::VectorXd& a, double cond_exp) {
        if (mode.discounted)
          return -mode.beta * cond_exp +
                 problem.running_cost(xv, a, mode.beta * cond_exp);
        return problem.running_cost(xv, a, cond_exp / (horizon - t + 1.0));
      };
      const double base_val = e + dt * driver(problem.controls[static_cast<std::size_t>(reg)], e);

      double y_new = base_val;
      if (u_surface != nullptr && nj > 1) {
        for (std::size_t j = 0; j < nj; ++j) {
          if (static_cast<int>(j) == reg) {
            levels[j] = base_val;
            continue;
          }
          const double ej = u_surface->eval(xv, static_cast<int>(j));
          levels[j] = ej + dt * driver(problem.controls[j], ej);
        }
        for (std::size_t j = 0; j < nj; ++j) {
          const double uj = levels[j] - base_val;
          const double up = std::max(uj, 0.0);
          gap_rate += up * up * theta_each;
          res.u_means[k][j] += uj;
        }
        if (penalty_n > 0) {
          // implicit penalty resolution: the fixed point of
          //   y = base + n dt sum_a (level_a - y)_+ theta({a})
          // is unique (the right side decreases in y); water-filling over the
          // sorted levels finds it. Implicit treatment stays stable for any
          // n dt, where the explicit increment overshoots once
          // n theta dt exceeds 1.
          std::sort(levels.begin(), levels.end(), std::greater<double>());
          if (base_val < levels.front()) {
            const double c = static_cast<double>(penalty_n) * dt * theta_each;
            double sum_top = 0.0;
            for (std::size_t m = 1; m <= nj; ++m) {
              sum_top += levels[m - 1];
              const double candidate =
                  (base_val + c * sum_top) / (1.0 + c * static_cast<double>(m));
              if (m == nj || candidate >= levels[m]) {
                y_new = candidate;
                break;
              }
            }
          }
        }
      }
      y_curr[static_cast<Eigen::Index>(q)] = y_new;
      // realized penalty increment: n dt sum (U)_+ theta = y - base
      if (penalty_n > 0) pen_rate += (y_new - base_val) / (dt * static_cast<double>(penalty_n));
      y_sum += y_new;
    }

    res.pen_rates[k] = pen_rate / static_cast<double>(n_block);
    res.gap_rates[k] = gap_rate / static_cast<double>(n_block);
    res.y_means[k] = y_sum / static_cast<double>(n_block);
    for (auto& um : res.u_means[k]) um /= static_cast<double>(n_block);

    // Z estimate: regression of the (centered) next-step value against the
    // Brownian increment over [t_k, t_k + dt]
    const double ymean_next = y_next.mean();
    for (std::size_t q = 0; q < n_block; ++q)
      for (int c = 0; c < d; ++c)
        res.z[k][c] += (y_next[static_cast<Eigen::Index>(q)] - ymean_next) *
                       fs.dw[((p_begin + q) * n_steps + k) * static_cast<std::size_t>(d) +
                             static_cast<std::size_t>(c)];
    res.z[k] /= static_cast<double>(n_block) * dt;

    if (!at_origin) {
      prev_surface = std::move(surface);
      have_prev_surface = true;
    }
    y_next.swap(y_curr);
  }

  res.y0 = y_next.mean();
  return res;
}

BsdeSolution backward_pass(const ControlProblem& problem, const Eigen::VectorXd& x0,
                           int a0_index, const BackwardMode& mode, int penalty_n, double horizon,
                           double dt, std::size_t n_paths, const RegressionBasis& basis,
                           std::uint64_t seed) {
  if (!(dt > 0.0)) throw std::invalid_argument("bsde: dt must be positive");
  if (penalty_n < 0) throw std::invalid_argument("bsde: penalty level n must be >= 0");
  const std::size_t basis_size = basis.size(problem.dim_x, problem.n_controls());
  if (n_paths < 50 * basis_size)
    throw RegressionError("bsde: n_paths must be at least 50 x basis size");

  const std::size_t n_steps = static_cast<std::size_t>(std::llround(horizon / dt));
  if (n_steps == 0) throw std::invalid_argument("bsde: horizon shorter than one step");
  const ForwardStore fs = simulate_forward(problem, x0, a0_index, dt, n_steps, n_paths, seed);

  // independent path blocks: the Y_0 estimate is the block mean and the
  // standard error the spread across blocks. Blocks are kept large (the
  // per-block surfaces feed a max-type penalty, whose noise bias shrinks
  // with the per-surface sample size).
  const std::size_t min_block = std::max<std::size_t>(2000, 50 * basis_size);
  std::size_t n_blocks = std::min<std::size_t>(8, n_paths / min_block);
  if (n_blocks == 0) n_blocks = 1;
  const std::size_t per_block = n_paths / n_blocks;

  std::vector<BlockResult> blocks(n_blocks);
  parallel_for(n_blocks, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t p_begin = b * per_block;
      const std::size_t p_end = b + 1 == n_blocks ? n_paths : p_begin + per_block;
      blocks[b] = block_backward(problem, fs, p_begin, p_end, mode, penalty_n, horizon, dt, basis);
    }
  });

  const std::size_t nj = problem.n_controls();
  BsdeSolution sol;
  sol.time_grid.resize(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) sol.time_grid[k] = dt * static_cast<double>(k);
  sol.beta = mode.beta;
  sol.penalty_n = penalty_n;
  sol.horizon = horizon;
  sol.n_paths = n_paths;
  sol.diagnostics.resize(n_steps);
  sol.z_estimates.assign(n_steps, Eigen::VectorXd::Zero(problem.dim_x));

  const double nb = static_cast<double>(n_blocks);
  double y0_sum = 0.0, y0_sum2 = 0.0;
  for (const auto& blk : blocks) {
    y0_sum += blk.y0;
    y0_sum2 += blk.y0 * blk.y0;
  }
  sol.y0 = y0_sum / nb;
  sol.y0_standard_error =
      n_blocks > 1 ? std::sqrt(std::max(0.0, y0_sum2 / nb - sol.y0 * sol.y0) / (nb - 1.0)) : 0.0;

  std::vector<double> pen_rates(n_steps, 0.0);
  for (std::size_t k = 0; k < n_steps; ++k) {
    BsdeStepDiag diag;
    diag.t = sol.time_grid[k];
    diag.u_mean.assign(nj, 0.0);
    diag.regime_samples.assign(nj, 0);
    for (std::size_t p = 0; p < n_paths; ++p)
      diag.regime_samples[static_cast<std::size_t>(fs.regime[p * fs.n_times + k])]++;
    for (const auto& blk : blocks) {
      diag.y_mean += blk.y_means[k] / nb;
      diag.penalty_rate += blk.pen_rates[k] / nb;
      diag.gap_rate += blk.gap_rates[k] / nb;
      diag.max_condition = std::max(diag.max_condition, blk.max_conditions[k]);
      for (std::size_t j = 0; j < nj; ++j) diag.u_mean[j] += blk.u_means[k][j] / nb;
      sol.z_estimates[k] += blk.z[k] / nb;
    }
    pen_rates[k] = diag.penalty_rate;
    sol.diagnostics[k] = std::move(diag);
  }

  sol.penalty_accumulator.assign(n_steps + 1, 0.0);
  for (std::size_t k = 0; k < n_steps; ++k)
    sol.penalty_accumulator[k + 1] = sol.penalty_accumulator[k] +
                                     dt * static_cast<double>(penalty_n) * pen_rates[k];
  return sol;
}

}  // namespace

BsdeSolution solve_penalized_bsde(const ControlProblem& problem, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& a, double beta, int n, double t_trunc,
                                  double dt, std::size_t n_paths, const RegressionBasis& basis,
                                  std::uint64_t seed, double truncation_tail) {
  if (!(beta > 0.0)) throw std::invalid_argument("solve_penalized_bsde: beta must be positive");
  if (!(truncation_tail > 0.0 && truncation_tail < 1.0))
    throw std::invalid_argument("solve_penalized_bsde: truncation_tail in (0,1) required");
  if (t_trunc < std::log(1.0 / truncation_tail) / beta)
    throw std::invalid_argument(
        "solve_penalized_bsde: T_trunc below the e^{-beta T} truncation requirement");
  const int a0 = find_control_index(problem, a);
  BackwardMode mode;
  mode.discounted = true;
  mode.beta = beta;
  mode.terminal_h = false;
  return backward_pass(problem, x, a0, mode, n, t_trunc, dt, n_paths, basis, seed);
}

std::vector<PenalizationPoint> penalization_sweep(const ControlProblem& problem,
                                                  const Eigen::VectorXd& x,
                                                  const Eigen::VectorXd& a, double beta,
                                                  const std::vector<int>& n_list, double t_trunc,
                                                  double dt, std::size_t n_paths,
                                                  const RegressionBasis& basis, std::uint64_t seed,
                                                  double truncation_tail) {
  for (std::size_t i = 1; i < n_list.size(); ++i)
    if (n_list[i] <= n_list[i - 1])
      throw std::invalid_argument("penalization_sweep: n_list must be strictly increasing");
  std::vector<PenalizationPoint> out;
  for (int n : n_list) {
    // common random numbers across the sweep: same seed on purpose
    const BsdeSolution sol =
        solve_penalized_bsde(problem, x, a, beta, n, t_trunc, dt, n_paths, basis, seed,
                             truncation_tail);
    out.push_back({n, sol.y0, sol.y0_standard_error});
  }
  return out;
}

double jump_constraint_gap(const BsdeSolution& solution) {
  double gap = 0.0;
  for (std::size_t k = 0; k + 1 < solution.time_grid.size(); ++k)
    gap += (solution.time_grid[k + 1] - solution.time_grid[k]) * solution.diagnostics[k].gap_rate;
  return gap;
}

BsdeSolution solve_finite_horizon_bsde(const ControlProblem& problem, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& a, double horizon, int n, double dt,
                                       std::size_t n_paths, const RegressionBasis& basis,
                                       std::uint64_t seed) {
  if (!(horizon > 0.0))
    throw std::invalid_argument("solve_finite_horizon_bsde: horizon must be positive");
  const int a0 = find_control_index(problem, a);
  BackwardMode mode;
  mode.discounted = false;
  mode.beta = 0.0;
  mode.terminal_h = true;
  return backward_pass(problem, x, a0, mode, n, horizon, dt, n_paths, basis, seed);
}

double dual_bound_estimate(const ControlProblem& problem, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& a, const std::vector<TiltSpec>& tilt_family,
                           const DualPayoffSpec& payoff, double horizon, double dt,
                           std::size_t n_paths, std::uint64_t seed) {
  if (tilt_family.empty())
    throw std::invalid_argument("dual_bound_estimate: tilt family must be nonempty");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < tilt_family.size(); ++m) {
    // member-indexed seed: a superset re-evaluates shared members identically
    const PathEnsemble ens = simulate_paths(problem, x, a, dt, horizon, n_paths,
                                            tilt_family[m], mix64(seed ^ m));
    const std::size_t n_times = ens.n_times();
    double sum = 0.0;
    for (std::size_t p = 0; p < n_paths; ++p) {
      double log_disc = 0.0;  // int_0^t rho
      double integral = 0.0;
      for (std::size_t k = 0; k + 1 < n_times; ++k) {
        const Eigen::VectorXd xv = ens.state_vector(p, k);
        const double r = payoff.rho(ens.time_grid()[k], xv);
        integral += r * std::exp(log_disc) * (payoff.phi(xv) - payoff.lambda) * dt;
        log_disc += r * dt;
      }
      sum += std::exp(log_disc) * payoff.terminal_gap(ens.state_vector(p, n_times - 1)) + integral;
    }
    best = std::max(best, sum / static_cast<double>(n_paths));
  }
  return best;
}

void export_bsde_diagnostics_csv(const BsdeSolution& solution, const std::filesystem::path& file) {
  std::vector<std::string> header{"t", "y_mean", "penalty_rate", "gap_rate", "k_proxy",
                                  "max_condition"};
  const std::size_t nj = solution.diagnostics.empty() ? 0 : solution.diagnostics[0].u_mean.size();
  for (std::size_t j = 0; j < nj; ++j) header.push_back("u_mean_" + std::to_string(j));
  CsvWriter csv(file, header);
  for (std::size_t k = 0; k < solution.diagnostics.size(); ++k) {
    const auto& dg = solution.diagnostics[k];
    std::vector<double> row{dg.t,       dg.y_mean,   dg.penalty_rate,
                            dg.gap_rate, solution.penalty_accumulator[k], dg.max_condition};
    for (double um : dg.u_mean) row.push_back(um);
    csv.write_row(row);
  }
}

}  // namespace hjblab
