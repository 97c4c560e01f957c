#include "hjblab/control_problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "hjblab/rng.hpp"

namespace hjblab {

void ControlProblem::check_structure() const {
  if (dim_x < 1) throw std::invalid_argument("ControlProblem: dim_x must be positive");
  if (controls.empty()) throw std::invalid_argument("ControlProblem: control list is empty");
  for (std::size_t i = 0; i < controls.size(); ++i)
    for (std::size_t j = i + 1; j < controls.size(); ++j)
      if (controls[i].size() == controls[j].size() &&
          (controls[i] - controls[j]).lpNorm<Eigen::Infinity>() == 0.0)
        throw std::invalid_argument("ControlProblem: duplicate control points");
  if (!(gamma > 0.0)) throw std::invalid_argument("ControlProblem: gamma must be positive");
  if (!(intensity_total > 0.0))
    throw std::invalid_argument("ControlProblem: intensity_total must be positive");
  if (!drift || !diffusion || !running_cost || !data_h)
    throw std::invalid_argument("ControlProblem: missing coefficient function");
}

namespace {

// Deterministic unit directions: axes, box diagonals, then seeded extras.
std::vector<Eigen::VectorXd> stability_directions(int d) {
  std::vector<Eigen::VectorXd> dirs;
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    e[i] = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  if (d > 1) {
    const int corners = 1 << d;
    for (int c = 0; c < corners; ++c) {
      Eigen::VectorXd v(d);
      for (int i = 0; i < d; ++i) v[i] = (c >> i) & 1 ? 1.0 : -1.0;
      dirs.push_back(v.normalized());
    }
  }
  std::mt19937_64 eng(mix64(0x5db1u));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < 32; ++k) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = gauss(eng);
    if (v.norm() > 1e-12) dirs.push_back(v.normalized());
  }
  return dirs;
}

}  // namespace

ControlProblem make_ou_problem(const OuCoefficients& coeffs,
                               std::vector<Eigen::VectorXd> controls, double gamma,
                               RunningCostFn cost, ScalarFieldFn data_h,
                               bool cost_depends_on_y, double lip_f,
                               std::optional<double> kappa, double intensity_total) {
  if (controls.empty()) throw std::invalid_argument("make_ou_problem: empty control list");
  const int d = static_cast<int>(coeffs.mean_reversion(controls.front()).rows());

  // Uniform stability of B: x.B(a)x <= -gamma|x|^2 (homogeneous, so unit
  // directions suffice up to the random extras).
  const auto dirs = stability_directions(d);
  for (const auto& a : controls) {
    const Eigen::MatrixXd B = coeffs.mean_reversion(a);
    for (const auto& x : dirs) {
      const double quad = x.dot(B * x);
      if (quad > -gamma + 1e-10)
        throw std::invalid_argument(
            "make_ou_problem: mean-reversion matrix violates the stability margin "
            "x.B(a)x <= -gamma|x|^2 on a sampled direction");
    }
  }

  // L1 over the default sampling box (radius 10): x-Lipschitz from ||B||,
  // control-Lipschitz from pairwise coefficient differences.
  const double box = 10.0;
  double l1 = 0.0;
  for (const auto& a : controls) l1 = std::max(l1, coeffs.mean_reversion(a).norm());
  for (std::size_t i = 0; i < controls.size(); ++i)
    for (std::size_t j = i + 1; j < controls.size(); ++j) {
      const double da = (controls[i] - controls[j]).norm();
      if (da == 0.0) throw std::invalid_argument("make_ou_problem: duplicate control points");
      const double db = (coeffs.mean_reversion(controls[i]) - coeffs.mean_reversion(controls[j])).norm() * box +
                        (coeffs.drift_level(controls[i]) - coeffs.drift_level(controls[j])).norm() +
                        (coeffs.volatility(controls[i]) - coeffs.volatility(controls[j])).norm();
      l1 = std::max(l1, db / da);
    }

  ControlProblem p;
  p.dim_x = d;
  p.controls = std::move(controls);
  p.drift = [B = coeffs.mean_reversion, D = coeffs.drift_level](const Eigen::VectorXd& x,
                                                                const Eigen::VectorXd& a) {
    return Eigen::VectorXd(B(a) * x + D(a));
  };
  p.diffusion = [S = coeffs.volatility](const Eigen::VectorXd&, const Eigen::VectorXd& a) {
    return S(a);
  };
  p.running_cost = std::move(cost);
  p.data_h = std::move(data_h);
  p.gamma = gamma;
  p.lip_b_sigma = l1;
  p.lip_f = lip_f;
  p.kappa = kappa;
  p.intensity_total = intensity_total;
  p.cost_depends_on_y = cost_depends_on_y;
  p.check_structure();
  return p;
}

double dissipativity_margin(const ControlProblem& problem, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& x_prime, const Eigen::VectorXd& a) {
  const Eigen::VectorXd dx = x - x_prime;
  const double dist2 = dx.squaredNorm();
  if (dist2 == 0.0) throw std::invalid_argument("dissipativity_margin: x == x'");
  const Eigen::VectorXd db = problem.drift(x, a) - problem.drift(x_prime, a);
  const Eigen::MatrixXd ds = problem.diffusion(x, a) - problem.diffusion(x_prime, a);
  return (dx.dot(db) + 0.5 * ds.squaredNorm()) / dist2;
}

ValidationReport validate_problem(const ControlProblem& problem, int n_samples,
                                  double box_radius, std::uint64_t seed, double tolerance) {
  if (n_samples < 1) throw std::invalid_argument("validate_problem: n_samples >= 1 required");
  if (!(box_radius > 0.0)) throw std::invalid_argument("validate_problem: box_radius > 0 required");
  problem.check_structure();

  std::mt19937_64 eng(mix64(seed));
  std::uniform_real_distribution<double> unif(-box_radius, box_radius);
  std::uniform_int_distribution<std::size_t> pick(0, problem.controls.size() - 1);
  const int d = problem.dim_x;
  const double inf = std::numeric_limits<double>::infinity();

  double worst_diss = inf, worst_lip_bs = inf, worst_lip_f = inf, worst_mono = inf,
         worst_decay = inf;

  for (int s = 0; s < n_samples; ++s) {
    Eigen::VectorXd x(d), xp(d);
    for (int i = 0; i < d; ++i) {
      x[i] = unif(eng);
      xp[i] = unif(eng);
    }
    const Eigen::VectorXd& a = problem.controls[pick(eng)];
    const Eigen::VectorXd& ap = problem.controls[pick(eng)];
    double y = unif(eng), yp = unif(eng);
    if (y > yp) std::swap(y, yp);  // y < y'

    // (H1)(ii): slack of the dissipativity inequality, normalized by |x-x'|^2
    if ((x - xp).squaredNorm() > 0.0) {
      const double q = dissipativity_margin(problem, x, xp, a);
      worst_diss = std::min(worst_diss, -q - problem.gamma);
    }

    // (H1)(i)
    {
      const double lhs = (problem.drift(x, a) - problem.drift(xp, ap)).norm() +
                         (problem.diffusion(x, a) - problem.diffusion(xp, ap)).norm();
      const double rhs = problem.lip_b_sigma * ((x - xp).norm() + (a - ap).norm());
      worst_lip_bs = std::min(worst_lip_bs, rhs - lhs);
    }

    // (H2)(i)
    {
      const double lhs =
          std::abs(problem.running_cost(x, a, y) - problem.running_cost(xp, ap, yp));
      const double rhs =
          problem.lip_f * ((x - xp).norm() + (a - ap).norm() + std::abs(y - yp));
      worst_lip_f = std::min(worst_lip_f, rhs - lhs);
    }

    // (H2)(ii): f nonincreasing in y, i.e. f(.,y) >= f(.,y') for y < y'
    const double fy = problem.running_cost(x, a, y);
    const double fyp = problem.running_cost(x, a, yp);
    worst_mono = std::min(worst_mono, fy - fyp);

    // (H3): with kappa, strict decay of the y-part; without, f1 == 0 so f
    // must not depend on y at all.
    if (y < yp) {
      if (problem.kappa) {
        worst_decay = std::min(worst_decay, (fy - fyp) - *problem.kappa * (yp - y));
      } else {
        worst_decay = std::min(worst_decay, -std::abs(fy - fyp));
      }
    }
  }

  const auto check = [tolerance](double margin) {
    return AssumptionCheck{margin >= -tolerance, margin};
  };
  ValidationReport report;
  report.lipschitz_b_sigma = check(worst_lip_bs);
  report.dissipativity = check(worst_diss);
  report.lipschitz_f = check(worst_lip_f);
  report.monotone_f = check(worst_mono);
  report.strict_decay = check(worst_decay);
  report.sample_count = n_samples;
  return report;
}

}  // namespace hjblab
