#include "hjblab/pde_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "hjblab/csv.hpp"
#include "hjblab/errors.hpp"
#include "hjblab/parallel.hpp"

namespace hjblab {

namespace {

struct Stencil {
  double diag = 0.0;
  std::uint32_t nbr[8];
  double w[8];
  int n = 0;
  bool pinned = false;  // dirichlet row

  void add(std::size_t node, double weight) {
    for (int k = 0; k < n; ++k)
      if (nbr[k] == node) {
        w[k] += weight;
        return;
      }
    nbr[n] = static_cast<std::uint32_t>(node);
    w[n] = weight;
    ++n;
  }
};

double apply_row(const Stencil& row, const Eigen::VectorXd& v, std::size_t i) {
  double acc = row.diag * v[static_cast<Eigen::Index>(i)];
  for (int k = 0; k < row.n; ++k) acc += row.w[k] * v[row.nbr[k]];
  return acc;
}

// One row of L^a_h at a node. Centered drift where the diffusion weight left
// on the axis (after the cross-term allocation) covers |b_i|/(2h); upwind
// otherwise. Boundary closure: inward one-sided drift, diffusion and cross
// terms dropped in the offending dimension(s).
Stencil build_row(const Grid& grid, const std::vector<std::size_t>& multi,
                  const Eigen::VectorXd& b, const Eigen::MatrixXd& S) {
  const int d = grid.dim();
  const double h = grid.spacing();
  const std::size_t flat = grid.flatten(multi);

  Stencil row;
  std::vector<std::size_t> m = multi;
  const auto shifted = [&](int dim, int step) {
    m[static_cast<std::size_t>(dim)] =
        static_cast<std::size_t>(static_cast<long long>(multi[static_cast<std::size_t>(dim)]) + step);
    const std::size_t idx = grid.flatten(m);
    m[static_cast<std::size_t>(dim)] = multi[static_cast<std::size_t>(dim)];
    return idx;
  };

  bool at_edge[2] = {false, false};
  for (int k = 0; k < d; ++k)
    at_edge[k] = multi[static_cast<std::size_t>(k)] == 0 ||
                 multi[static_cast<std::size_t>(k)] + 1 == grid.extent(k);

  // cross-derivative allocation (only with both dimensions interior)
  double cross = 0.0;
  if (d == 2 && !at_edge[0] && !at_edge[1]) {
    cross = S(0, 1);
    const double need = std::abs(cross);
    if (S(0, 0) - need < -1e-13 || S(1, 1) - need < -1e-13)
      throw MonotonicityError(
          "wide-stencil split lost diagonal dominance: |sigma sigma^T_12| exceeds a diagonal "
          "entry");
    if (cross != 0.0) {
      const double wd = std::abs(cross) / (2.0 * h * h);
      if (cross > 0.0) {
        // NE and SW corners
        m[0] = multi[0] + 1;
        m[1] = multi[1] + 1;
        row.add(grid.flatten(m), wd);
        m[0] = multi[0] - 1;
        m[1] = multi[1] - 1;
        row.add(grid.flatten(m), wd);
      } else {
        // NW and SE corners
        m[0] = multi[0] + 1;
        m[1] = multi[1] - 1;
        row.add(grid.flatten(m), wd);
        m[0] = multi[0] - 1;
        m[1] = multi[1] + 1;
        row.add(grid.flatten(m), wd);
      }
      m[0] = multi[0];
      m[1] = multi[1];
      for (int k = 0; k < d; ++k) {
        row.add(shifted(k, +1), -wd);
        row.add(shifted(k, -1), -wd);
      }
    }
  }

  for (int k = 0; k < d; ++k) {
    const double bk = b[k];
    const double skk = S(k, k);
    if (at_edge[k]) {
      // closure: inward drift difference only
      const bool at_lower = multi[static_cast<std::size_t>(k)] == 0;
      if (at_lower) {
        if (bk < -1e-12)
          throw MonotonicityError("one-sided boundary closure needs inward drift (lower edge)");
        if (bk > 0.0) row.add(shifted(k, +1), bk / h);
      } else {
        if (bk > 1e-12)
          throw MonotonicityError("one-sided boundary closure needs inward drift (upper edge)");
        if (bk < 0.0) row.add(shifted(k, -1), -bk / h);
      }
      continue;
    }
    // centered second difference
    const double wdiff = skk / (2.0 * h * h);
    row.add(shifted(k, +1), wdiff);
    row.add(shifted(k, -1), wdiff);
    // drift: centered if the axis weight stays nonnegative, upwind otherwise
    const double axis_room = (skk - (d == 2 ? std::abs(cross) : 0.0)) / (2.0 * h * h);
    if (axis_room >= std::abs(bk) / (2.0 * h)) {
      row.add(shifted(k, +1), bk / (2.0 * h));
      row.add(shifted(k, -1), -bk / (2.0 * h));
    } else if (bk >= 0.0) {
      row.add(shifted(k, +1), bk / h);
    } else {
      row.add(shifted(k, -1), -bk / h);
    }
  }

  // clamp float dust, verify monotonicity, and set the diagonal so the row
  // annihilates constants exactly
  double sum = 0.0, scale = 0.0;
  for (int k = 0; k < row.n; ++k) scale = std::max(scale, std::abs(row.w[k]));
  for (int k = 0; k < row.n; ++k) {
    if (row.w[k] < 0.0) {
      if (row.w[k] < -1e-12 * std::max(1.0, scale))
        throw MonotonicityError("negative off-diagonal stencil weight");
      row.w[k] = 0.0;
    }
    sum += row.w[k];
  }
  row.diag = -sum;
  (void)flat;
  return row;
}

struct AssembledOperator {
  const Grid* grid = nullptr;
  std::vector<std::vector<Stencil>> rows;  // [control][node]
  Eigen::MatrixXd node_coords;             // N x d
  std::vector<Eigen::VectorXd> cost_table; // [control](node), only if y-independent
  bool y_dependent = false;
  double max_neg_diag = 0.0;
  double cfl_denominator = 0.0;  // d max||sigma sigma^T|| + h max|b|

  double cost(const ControlProblem& p, std::size_t i, std::size_t j, double y) const {
    if (!y_dependent) return cost_table[j][static_cast<Eigen::Index>(i)];
    return p.running_cost(node_coords.row(static_cast<Eigen::Index>(i)).transpose(),
                          p.controls[j], y);
  }
};

AssembledOperator assemble(const ControlProblem& problem, const Grid& grid) {
  problem.check_structure();
  if (problem.dim_x != grid.dim())
    throw std::invalid_argument("grid dimension does not match the problem state dimension");

  const std::size_t n = grid.size();
  const std::size_t nj = problem.n_controls();
  const bool dirichlet = grid.boundary() == BoundaryPolicy::dirichlet_from_growth;

  AssembledOperator op;
  op.grid = &grid;
  op.y_dependent = problem.cost_depends_on_y;
  op.rows.assign(nj, std::vector<Stencil>(n));
  op.node_coords.resize(static_cast<Eigen::Index>(n), grid.dim());
  if (!op.y_dependent) op.cost_table.assign(nj, Eigen::VectorXd(static_cast<Eigen::Index>(n)));

  double max_s = 0.0, max_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto multi = grid.unflatten(i);
    const Eigen::VectorXd x = grid.node(i);
    op.node_coords.row(static_cast<Eigen::Index>(i)) = x.transpose();
    const bool boundary = grid.on_boundary(i);
    for (std::size_t j = 0; j < nj; ++j) {
      const Eigen::VectorXd& a = problem.controls[j];
      if (!op.y_dependent)
        op.cost_table[j][static_cast<Eigen::Index>(i)] = problem.running_cost(x, a, 0.0);
      if (boundary && dirichlet) {
        op.rows[j][i].pinned = true;
        continue;
      }
      const Eigen::VectorXd b = problem.drift(x, a);
      const Eigen::MatrixXd sig = problem.diffusion(x, a);
      const Eigen::MatrixXd S = sig * sig.transpose();
      op.rows[j][i] = build_row(grid, multi, b, S);
      op.max_neg_diag = std::max(op.max_neg_diag, -op.rows[j][i].diag);
      max_s = std::max(max_s, S.norm());
      max_b = std::max(max_b, b.norm());
    }
  }
  op.cfl_denominator = static_cast<double>(grid.dim()) * max_s + grid.spacing() * max_b;
  return op;
}

// one Howard iteration family: improvement at frozen y, evaluation of the
// linear(ized) system, full nonlinear residual
struct HowardWorkspace {
  std::vector<int> policy;
  Eigen::VectorXd rhs;
  // 1D Thomas buffers
  std::vector<double> lo, di, up, scratch;
  // 2D red-black node lists
  std::vector<std::uint32_t> color[2];
};

void init_colors(const Grid& grid, HowardWorkspace& ws) {
  if (grid.dim() != 2) return;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto multi = grid.unflatten(i);
    ws.color[(multi[0] + multi[1]) & 1].push_back(static_cast<std::uint32_t>(i));
  }
}

void improve_policy(const AssembledOperator& op, const ControlProblem& problem,
                    const Eigen::VectorXd& v, const Eigen::VectorXd& y_frozen,
                    std::vector<int>& policy) {
  const std::size_t n = op.grid->size();
  const std::size_t nj = problem.n_controls();
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (op.rows[0][i].pinned) {
        policy[i] = 0;
        continue;
      }
      int best = 0;
      double best_val = apply_row(op.rows[0][i], v, i) +
                        op.cost(problem, i, 0, y_frozen[static_cast<Eigen::Index>(i)]);
      for (std::size_t j = 1; j < nj; ++j) {
        const double val = apply_row(op.rows[j][i], v, i) +
                           op.cost(problem, i, j, y_frozen[static_cast<Eigen::Index>(i)]);
        if (val > best_val) {
          best_val = val;
          best = static_cast<int>(j);
        }
      }
      policy[i] = best;
    }
  });
}

// solve (beta I - L^policy) v = rhs; pinned rows take pin values
Eigen::VectorXd evaluate_policy(const AssembledOperator& op, double beta,
                                const std::vector<int>& policy, const Eigen::VectorXd& rhs,
                                const Eigen::VectorXd& pin, const Eigen::VectorXd& v0,
                                HowardWorkspace& ws, double lin_tol) {
  const Grid& grid = *op.grid;
  const std::size_t n = grid.size();

  if (grid.dim() == 1) {
    ws.lo.assign(n, 0.0);
    ws.up.assign(n, 0.0);
    ws.di.assign(n, 0.0);
    Eigen::VectorXd b(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const Stencil& row = op.rows[static_cast<std::size_t>(policy[i])][i];
      if (row.pinned) {
        ws.di[i] = 1.0;
        b[static_cast<Eigen::Index>(i)] = pin[static_cast<Eigen::Index>(i)];
        continue;
      }
      ws.di[i] = beta - row.diag;
      b[static_cast<Eigen::Index>(i)] = rhs[static_cast<Eigen::Index>(i)];
      for (int k = 0; k < row.n; ++k) {
        if (row.nbr[k] == i - 1)
          ws.lo[i] = -row.w[k];
        else if (row.nbr[k] == i + 1)
          ws.up[i] = -row.w[k];
      }
    }
    // Thomas sweep (diagonally dominant M-matrix, no pivoting needed)
    ws.scratch.assign(n, 0.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    double denom = ws.di[0];
    ws.scratch[0] = ws.up[0] / denom;
    v[0] = b[0] / denom;
    for (std::size_t i = 1; i < n; ++i) {
      denom = ws.di[i] - ws.lo[i] * ws.scratch[i - 1];
      ws.scratch[i] = ws.up[i] / denom;
      v[static_cast<Eigen::Index>(i)] =
          (b[static_cast<Eigen::Index>(i)] - ws.lo[i] * v[static_cast<Eigen::Index>(i - 1)]) / denom;
    }
    for (std::size_t i = n - 1; i-- > 0;)
      v[static_cast<Eigen::Index>(i)] -= ws.scratch[i] * v[static_cast<Eigen::Index>(i + 1)];
    return v;
  }

  // 2D: red-black Gauss-Seidel on the monotone 9-point system
  Eigen::VectorXd v = v0;
  const int max_sweeps = 200000;
  const double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (int c = 0; c < 2; ++c) {
      const auto& nodes = ws.color[c];
      parallel_for(nodes.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t q = begin; q < end; ++q) {
          const std::size_t i = nodes[q];
          const Stencil& row = op.rows[static_cast<std::size_t>(policy[i])][i];
          if (row.pinned) {
            v[static_cast<Eigen::Index>(i)] = pin[static_cast<Eigen::Index>(i)];
            continue;
          }
          double acc = rhs[static_cast<Eigen::Index>(i)];
          for (int k = 0; k < row.n; ++k) acc += row.w[k] * v[row.nbr[k]];
          v[static_cast<Eigen::Index>(i)] = acc / (beta - row.diag);
        }
      });
    }
    if ((sweep & 7) == 7 || sweep + 1 == max_sweeps) {
      double res = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const Stencil& row = op.rows[static_cast<std::size_t>(policy[i])][i];
        if (row.pinned) continue;
        const double r = (beta - row.diag) * v[static_cast<Eigen::Index>(i)] -
                         [&] {
                           double acc = 0.0;
                           for (int k = 0; k < row.n; ++k) acc += row.w[k] * v[row.nbr[k]];
                           return acc;
                         }() -
                         rhs[static_cast<Eigen::Index>(i)];
        res = std::max(res, std::abs(r));
      }
      if (res <= lin_tol * scale) return v;
    }
  }
  throw SolverError("policy evaluation: Gauss-Seidel did not converge");
}

struct HowardOutput {
  Eigen::VectorXd v;
  std::vector<int> policy;
  int iterations = 0;
  double residual = 0.0;
};

// beta v - sup_a [ L^a v + f(x,a,y) + extra ] = 0 with either y = beta v
// (self-consistent, refreshed each sweep) or y frozen externally.
HowardOutput howard_solve(const AssembledOperator& op, const ControlProblem& problem,
                          double beta, const Eigen::VectorXd* frozen_y,
                          const Eigen::VectorXd* extra_source, const Eigen::VectorXd& pin,
                          Eigen::VectorXd v, double tol, int max_iter) {
  const std::size_t n = op.grid->size();
  const std::size_t nj = problem.n_controls();

  HowardWorkspace ws;
  ws.policy.assign(n, 0);
  init_colors(*op.grid, ws);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));

  double residual = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= max_iter; ++iter) {
    if (frozen_y)
      y = *frozen_y;
    else
      y = beta * v;

    improve_policy(op, problem, v, y, ws.policy);
    for (std::size_t i = 0; i < n; ++i) {
      double g = op.cost(problem, i, static_cast<std::size_t>(ws.policy[i]),
                         y[static_cast<Eigen::Index>(i)]);
      if (extra_source) g += (*extra_source)[static_cast<Eigen::Index>(i)];
      rhs[static_cast<Eigen::Index>(i)] = g;
    }
    v = evaluate_policy(op, beta, ws.policy, rhs, pin, v, ws, std::max(tol * 0.05, 1e-14));

    // full nonlinear residual at the new iterate
    if (frozen_y)
      y = *frozen_y;
    else
      y = beta * v;
    residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (op.rows[0][i].pinned) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nj; ++j) {
        double val = apply_row(op.rows[j][i], v, i) +
                     op.cost(problem, i, j, y[static_cast<Eigen::Index>(i)]);
        if (extra_source) val += (*extra_source)[static_cast<Eigen::Index>(i)];
        best = std::max(best, val);
      }
      residual = std::max(residual, std::abs(beta * v[static_cast<Eigen::Index>(i)] - best));
    }
    // the residual cancels terms of size max_neg_diag * |v|; below this
    // floor it is pure rounding noise
    const double fp_floor = 32.0 * std::numeric_limits<double>::epsilon() * op.max_neg_diag *
                            (1.0 + v.lpNorm<Eigen::Infinity>());
    if (residual <= tol + fp_floor) return {std::move(v), std::move(ws.policy), iter, residual};
  }
  throw SolverError("policy iteration did not reach the residual tolerance within max_iter");
}

}  // namespace

double discrete_generator_apply(const ControlProblem& problem, const Grid& grid,
                                const Eigen::VectorXd& field_values, const Eigen::VectorXd& a,
                                std::size_t node) {
  if (field_values.size() != static_cast<Eigen::Index>(grid.size()))
    throw std::invalid_argument("discrete_generator_apply: field size does not match the grid");
  if (grid.on_boundary(node) && grid.boundary() == BoundaryPolicy::dirichlet_from_growth)
    throw std::invalid_argument("discrete_generator_apply: node is pinned by the dirichlet policy");
  const Eigen::VectorXd x = grid.node(node);
  const Eigen::VectorXd b = problem.drift(x, a);
  const Eigen::MatrixXd sig = problem.diffusion(x, a);
  const Stencil row = build_row(grid, grid.unflatten(node), b, sig * sig.transpose());
  return apply_row(row, field_values, node);
}

double explicit_cfl_dt(const ControlProblem& problem, const Grid& grid) {
  const AssembledOperator op = assemble(problem, grid);
  const double h = grid.spacing();
  double bound = std::numeric_limits<double>::infinity();
  if (op.cfl_denominator > 0.0) bound = h * h / op.cfl_denominator;
  if (op.max_neg_diag > 0.0) bound = std::min(bound, 1.0 / op.max_neg_diag);
  return bound;
}

ValueField solve_discounted(const ControlProblem& problem, const Grid& grid, double beta,
                            double tol, int max_iter) {
  if (!(beta > 0.0)) throw std::invalid_argument("solve_discounted: beta must be positive");
  const AssembledOperator op = assemble(problem, grid);
  const Eigen::VectorXd pin = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  Eigen::VectorXd v0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  HowardOutput out =
      howard_solve(op, problem, beta, nullptr, nullptr, pin, std::move(v0), tol, max_iter);

  ValueField field;
  field.grid = grid;
  field.values = std::move(out.v);
  field.kind = FieldKind::discounted;
  field.beta = beta;
  field.info = {out.iterations, out.residual};
  field.fitted_growth_const = fitted_growth_constant(field);
  if (!field.all_finite()) throw SolverError("solve_discounted: non-finite values");
  return field;
}

std::vector<ValueField> solve_parabolic(const ControlProblem& problem, const Grid& grid,
                                        double t_max, double dt,
                                        const std::vector<double>& record_times,
                                        TimeStepping stepping) {
  if (t_max < 0.0) throw std::invalid_argument("solve_parabolic: t_max must be nonnegative");
  for (double t : record_times)
    if (t < 0.0 || t > t_max + 1e-12)
      throw std::invalid_argument("solve_parabolic: record time outside [0, t_max]");

  const AssembledOperator op = assemble(problem, grid);
  const std::size_t n = grid.size();
  const std::size_t nj = problem.n_controls();

  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    v[static_cast<Eigen::Index>(i)] =
        problem.data_h(op.node_coords.row(static_cast<Eigen::Index>(i)).transpose());
  const Eigen::VectorXd pin = v;  // dirichlet-from-growth pins v = h

  const auto make_field = [&](double horizon, const Eigen::VectorXd& values, int steps) {
    ValueField f;
    f.grid = grid;
    f.values = values;
    f.kind = FieldKind::parabolic;
    f.horizon = horizon;
    f.info = {steps, 0.0};
    if (!f.all_finite()) throw SolverError("solve_parabolic: non-finite values (NaN guard)");
    return f;
  };

  std::vector<ValueField> recorded;
  if (t_max == 0.0) {
    recorded.push_back(make_field(0.0, v, 0));
    return recorded;
  }

  if (stepping == TimeStepping::explicit_euler) {
    const double h = grid.spacing();
    double stable = std::numeric_limits<double>::infinity();
    if (op.cfl_denominator > 0.0) stable = h * h / op.cfl_denominator;
    if (op.max_neg_diag > 0.0) stable = std::min(stable, 1.0 / op.max_neg_diag);
    if (dt <= 0.0) dt = stable;
    if (dt > stable * (1.0 + 1e-12))
      throw SolverError("solve_parabolic: explicit dt violates the monotone CFL bound");
    // land on t_max exactly
    const std::size_t n_steps = static_cast<std::size_t>(std::ceil(t_max / dt - 1e-12));
    dt = t_max / static_cast<double>(n_steps);

    std::vector<std::size_t> record_steps;
    for (double t : record_times) {
      record_steps.push_back(static_cast<std::size_t>(std::ceil(t / dt - 1e-9)));
      if (record_steps.back() == 0) recorded.push_back(make_field(0.0, v, 0));
    }

    Eigen::VectorXd vn(static_cast<Eigen::Index>(n));
    for (std::size_t m = 0; m < n_steps; ++m) {
      const double t = dt * static_cast<double>(m);
      parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          if (op.rows[0][i].pinned) {
            vn[static_cast<Eigen::Index>(i)] = pin[static_cast<Eigen::Index>(i)];
            continue;
          }
          const double y = v[static_cast<Eigen::Index>(i)] / (t + 1.0);
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < nj; ++j)
            best = std::max(best, apply_row(op.rows[j][i], v, i) + op.cost(problem, i, j, y));
          vn[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(i)] + dt * best;
        }
      });
      v.swap(vn);
      const std::size_t done = m + 1;
      if (!v.allFinite()) throw SolverError("solve_parabolic: non-finite values (NaN guard)");
      for (std::size_t r = 0; r < record_steps.size(); ++r)
        if (record_steps[r] == done)
          recorded.push_back(make_field(dt * static_cast<double>(done), v, static_cast<int>(done)));
    }
    if (recorded.empty()) recorded.push_back(make_field(t_max, v, static_cast<int>(n_steps)));
    return recorded;
  }

  // implicit euler: each step solves
  //   (1/dt) v' - sup_a [ L^a v' + f(x,a, v/(T+1)) + v/dt ] = 0
  if (dt <= 0.0) throw std::invalid_argument("solve_parabolic: implicit mode needs dt > 0");
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(t_max / dt - 1e-12));
  dt = t_max / static_cast<double>(n_steps);
  std::vector<std::size_t> record_steps;
  for (double t : record_times) {
    record_steps.push_back(static_cast<std::size_t>(std::ceil(t / dt - 1e-9)));
    if (record_steps.back() == 0) recorded.push_back(make_field(0.0, v, 0));
  }

  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t m = 0; m < n_steps; ++m) {
    const double t = dt * static_cast<double>(m);
    y = v / (t + 1.0);
    const Eigen::VectorXd extra = v / dt;
    HowardOutput out = howard_solve(op, problem, 1.0 / dt, &y, &extra, pin, v, 1e-10, 50);
    v = std::move(out.v);
    const std::size_t done = m + 1;
    for (std::size_t r = 0; r < record_steps.size(); ++r)
      if (record_steps[r] == done)
        recorded.push_back(make_field(dt * static_cast<double>(done), v, static_cast<int>(done)));
  }
  if (recorded.empty()) recorded.push_back(make_field(t_max, v, static_cast<int>(n_steps)));
  return recorded;
}

ErgodicPair solve_ergodic_vanishing_discount(const ControlProblem& problem, const Grid& grid,
                                             const std::vector<double>& beta_schedule,
                                             double tol) {
  if (beta_schedule.size() < 3)
    throw std::invalid_argument("solve_ergodic_vanishing_discount: schedule length >= 3 required");
  for (std::size_t k = 0; k < beta_schedule.size(); ++k) {
    if (!(beta_schedule[k] > 0.0))
      throw std::invalid_argument("solve_ergodic_vanishing_discount: betas must be positive");
    if (k > 0 && !(beta_schedule[k] < beta_schedule[k - 1]))
      throw std::invalid_argument("solve_ergodic_vanishing_discount: schedule must decrease");
  }

  const std::size_t anchor = grid.anchor_node();
  std::vector<double> lambda_betas;
  std::vector<Eigen::VectorXd> phis;  // last three phi^beta
  ValueField last_field;
  for (double beta : beta_schedule) {
    ValueField f = solve_discounted(problem, grid, beta, tol);
    const double v0 = f.values[static_cast<Eigen::Index>(anchor)];
    lambda_betas.push_back(beta * v0);
    Eigen::VectorXd phi = f.values.array() - v0;
    phis.push_back(std::move(phi));
    if (phis.size() > 3) phis.erase(phis.begin());
    last_field = std::move(f);
  }

  // least-squares linear fit in beta over the last three points, evaluated
  // at beta = 0; the same weights extrapolate lambda and (pointwise) phi
  const std::size_t m = beta_schedule.size();
  const double b1 = beta_schedule[m - 3], b2 = beta_schedule[m - 2], b3 = beta_schedule[m - 1];
  const double bbar = (b1 + b2 + b3) / 3.0;
  const double sxx = (b1 - bbar) * (b1 - bbar) + (b2 - bbar) * (b2 - bbar) + (b3 - bbar) * (b3 - bbar);
  const auto fit_weight = [&](double b) { return 1.0 / 3.0 - (b - bbar) * bbar / sxx; };
  const double w1 = fit_weight(b1), w2 = fit_weight(b2), w3 = fit_weight(b3);

  const double lambda =
      w1 * lambda_betas[m - 3] + w2 * lambda_betas[m - 2] + w3 * lambda_betas[m - 1];
  Eigen::VectorXd phi = w1 * phis[0] + w2 * phis[1] + w3 * phis[2];
  phi.array() -= phi[static_cast<Eigen::Index>(anchor)];  // phi(anchor) exactly 0

  ErgodicPair pair;
  pair.lambda = lambda;
  pair.phi = std::move(last_field);
  pair.phi.values = std::move(phi);
  pair.beta_schedule = beta_schedule;
  pair.lambda_betas = lambda_betas;

  // monotone-trend warning on the lambda_beta sequence
  const double trend_tol = 1e-6 * (1.0 + std::abs(lambda));
  bool increasing = true, decreasing = true;
  for (std::size_t k = 1; k < lambda_betas.size(); ++k) {
    const double d = lambda_betas[k] - lambda_betas[k - 1];
    if (d < -trend_tol) increasing = false;
    if (d > trend_tol) decreasing = false;
  }
  if (!increasing && !decreasing)
    pair.warnings.push_back("lambda_beta sequence is not monotone along the schedule");

  pair.residual = ergodic_residual(problem, grid, pair);
  return pair;
}

namespace {

double residual_at_node(const ControlProblem& problem, const Grid& grid, const ErgodicPair& pair,
                        std::size_t i) {
  const Eigen::VectorXd x = grid.node(i);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& a : problem.controls) {
    const double val = discrete_generator_apply(problem, grid, pair.phi.values, a, i) +
                       problem.running_cost(x, a, pair.lambda);
    best = std::max(best, val);
  }
  return std::abs(pair.lambda - best);
}

}  // namespace

double ergodic_residual(const ControlProblem& problem, const Grid& grid, const ErgodicPair& pair) {
  double res = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.on_boundary(i)) continue;
    res = std::max(res, residual_at_node(problem, grid, pair, i));
  }
  return res;
}

double ergodic_residual_within(const ControlProblem& problem, const Grid& grid,
                               const ErgodicPair& pair, double radius) {
  double res = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.on_boundary(i)) continue;
    if (grid.node(i).lpNorm<Eigen::Infinity>() > radius + 1e-12) continue;
    res = std::max(res, residual_at_node(problem, grid, pair, i));
  }
  return res;
}

Policy extract_feedback(const ControlProblem& problem, const Grid& grid, const ErgodicPair& pair) {
  if (pair.phi.values.size() != static_cast<Eigen::Index>(grid.size()))
    throw std::invalid_argument("extract_feedback: pair does not live on this grid");
  const AssembledOperator op = assemble(problem, grid);
  Policy policy;
  policy.grid = grid;
  policy.control_index.assign(grid.size(), 0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Eigen::VectorXd x = op.node_coords.row(static_cast<Eigen::Index>(i)).transpose();
    int best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < problem.n_controls(); ++j) {
      // pinned rows carry no generator; rank controls by the cost term alone
      const double lv = op.rows[j][i].pinned ? 0.0 : apply_row(op.rows[j][i], pair.phi.values, i);
      const double val = lv + problem.running_cost(x, problem.controls[j], pair.lambda);
      if (val > best_val) {
        best_val = val;
        best = static_cast<int>(j);
      }
    }
    policy.control_index[i] = best;
  }
  return policy;
}

double max_difference_quotient(const ValueField& field) {
  const Grid& grid = field.grid;
  const double h = grid.spacing();
  double lip = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto multi = grid.unflatten(i);
    for (int d = 0; d < grid.dim(); ++d) {
      if (multi[static_cast<std::size_t>(d)] + 1 >= grid.extent(d)) continue;
      auto up = multi;
      ++up[static_cast<std::size_t>(d)];
      const double dv = std::abs(field.values[static_cast<Eigen::Index>(grid.flatten(up))] -
                                 field.values[static_cast<Eigen::Index>(i)]);
      lip = std::max(lip, dv / h);
    }
  }
  return lip;
}

double fitted_growth_constant(const ValueField& field) {
  double c = 0.0;
  for (std::size_t i = 0; i < field.grid.size(); ++i) {
    const double norm = field.grid.node(i).norm();
    c = std::max(c, std::abs(field.beta * field.values[static_cast<Eigen::Index>(i)]) / (1.0 + norm));
  }
  return c;
}

void export_field_csv(const ValueField& field, const std::filesystem::path& csv_file,
                      const std::filesystem::path& meta_file) {
  std::vector<std::string> header;
  for (int d = 0; d < field.grid.dim(); ++d) header.push_back("x" + std::to_string(d));
  header.push_back("value");
  CsvWriter csv(csv_file, header);
  std::vector<double> row(header.size());
  for (std::size_t i = 0; i < field.grid.size(); ++i) {
    const Eigen::VectorXd x = field.grid.node(i);
    for (int d = 0; d < field.grid.dim(); ++d) row[static_cast<std::size_t>(d)] = x[d];
    row.back() = field.values[static_cast<Eigen::Index>(i)];
    csv.write_row(row);
  }

  std::ofstream meta(meta_file, std::ios::binary);
  const char* kind = field.kind == FieldKind::parabolic
                         ? "parabolic"
                         : (field.kind == FieldKind::discounted ? "discounted" : "penalized");
  meta << "kind=" << kind << "\n";
  if (field.kind == FieldKind::parabolic) meta << "T=" << format_double(field.horizon) << "\n";
  if (field.kind != FieldKind::parabolic) meta << "beta=" << format_double(field.beta) << "\n";
  if (field.kind == FieldKind::penalized) meta << "n=" << field.penalty_level << "\n";
  meta << "residual=" << format_double(field.info.final_residual) << "\n";
  meta << "iterations=" << field.info.iterations << "\n";
  meta << "h=" << format_double(field.grid.spacing()) << "\n";
  meta << "boundary=" << to_string(field.grid.boundary()) << "\n";
  for (int d = 0; d < field.grid.dim(); ++d)
    meta << "bounds" << d << "=" << format_double(field.grid.bounds()[static_cast<std::size_t>(d)].first)
         << ":" << format_double(field.grid.bounds()[static_cast<std::size_t>(d)].second) << "\n";
}

}  // namespace hjblab
