#include "hjblab/forward_sim.hpp"

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
  throw std::invalid_argument("initial control a0 is not in the control list");
}

void check_blow_up(const Eigen::VectorXd& x, double radius) {
  if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > radius)
    throw SolverError("forward simulation diverged beyond the blow-up radius");
}

}  // namespace

Eigen::VectorXd PathEnsemble::state_vector(std::size_t path, std::size_t time) const {
  Eigen::VectorXd x(dim_);
  for (int c = 0; c < dim_; ++c) x[c] = state(path, time, c);
  return x;
}

std::size_t PathEnsemble::time_index(double t) const {
  if (time_grid_.size() > 1) {
    const double dt = time_grid_[1] - time_grid_[0];
    const double raw = t / dt;
    const double rounded = std::round(raw);
    if (std::abs(raw - rounded) <= 1e-9 * (1.0 + std::abs(raw)) && rounded >= 0.0 &&
        rounded < static_cast<double>(time_grid_.size()))
      return static_cast<std::size_t>(rounded);
  } else if (std::abs(t - time_grid_.front()) <= 1e-12) {
    return 0;
  }
  throw std::invalid_argument("time point is not on the ensemble grid");
}

PathEnsemble simulate_paths(const ControlProblem& problem, const Eigen::VectorXd& x0,
                            const Eigen::VectorXd& a0, double dt, double horizon,
                            std::size_t n_paths, const std::optional<TiltSpec>& tilt,
                            std::uint64_t seed) {
  if (!(dt > 0.0)) throw std::invalid_argument("simulate_paths: dt must be positive");
  if (!(horizon >= dt)) throw std::invalid_argument("simulate_paths: horizon T >= dt required");
  if (n_paths == 0) throw std::invalid_argument("simulate_paths: n_paths >= 1 required");
  const int a0_index = find_control_index(problem, a0);

  const std::size_t n_steps = static_cast<std::size_t>(std::llround(horizon / dt));
  const std::size_t n_times = n_steps + 1;
  const int d = problem.dim_x;
  const std::size_t n_controls = problem.n_controls();
  const double theta_each = problem.control_rate();
  const double theta_total = problem.intensity_total;

  PathEnsemble ens;
  ens.n_paths_ = n_paths;
  ens.dim_ = d;
  ens.a0_index_ = a0_index;
  ens.tilted_ = tilt.has_value();
  ens.seed_ = seed;
  ens.time_grid_.resize(n_times);
  for (std::size_t k = 0; k < n_times; ++k) ens.time_grid_[k] = dt * static_cast<double>(k);
  ens.states_.resize(n_paths * n_times * static_cast<std::size_t>(d));
  ens.regimes_.resize(n_paths * n_times);
  if (ens.tilted_) ens.weights_.resize(n_paths * n_times);
  ens.jump_logs_.resize(n_paths);

  parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
    std::vector<double> cum(n_controls);
    for (std::size_t p = begin; p < end; ++p) {
      auto eng = path_engine(seed, p);
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::uniform_real_distribution<double> unif(0.0, 1.0);

      Eigen::VectorXd x = x0;
      int regime = a0_index;
      double weight = 1.0;

      const auto record = [&](std::size_t k) {
        const std::size_t base = (p * n_times + k) * static_cast<std::size_t>(d);
        for (int c = 0; c < d; ++c) ens.states_[base + static_cast<std::size_t>(c)] = x[c];
        ens.regimes_[p * n_times + k] = regime;
        if (ens.tilted_) ens.weights_[p * n_times + k] = weight;
      };
      record(0);

      for (std::size_t m = 0; m < n_steps; ++m) {
        const double t = ens.time_grid_[m];
        const Eigen::VectorXd& a = problem.controls[static_cast<std::size_t>(regime)];

        // diffusion step with the pre-jump regime
        Eigen::VectorXd xi(d);
        for (int c = 0; c < d; ++c) xi[c] = gauss(eng);
        x += problem.drift(x, a) * dt + problem.diffusion(x, a) * (std::sqrt(dt) * xi);
        check_blow_up(x, 1e6);

        // regime jump by thinning, at most one per step
        double lambda = theta_total;
        if (ens.tilted_) {
          lambda = 0.0;
          for (std::size_t j = 0; j < n_controls; ++j) {
            const double nu_j = tilt->nu(t, problem.controls[j]);
            if (nu_j < 1.0 || nu_j > static_cast<double>(tilt->bound_n) + 1.0)
              throw std::invalid_argument("simulate_paths: tilt nu out of [1, n+1]");
            cum[j] = nu_j * theta_each;
            lambda += cum[j];
          }
        }
        const double p_jump = -std::expm1(-lambda * dt);
        const bool jumped = unif(eng) < p_jump;
        if (jumped) {
          int mark = static_cast<int>(n_controls) - 1;
          if (n_controls > 1) {
            const double u = unif(eng) * lambda;
            double acc = 0.0;
            for (std::size_t j = 0; j < n_controls; ++j) {
              acc += ens.tilted_ ? cum[j] : theta_each;
              if (u < acc) {
                mark = static_cast<int>(j);
                break;
              }
            }
          }
          if (ens.tilted_) {
            // exact per-step likelihood ratio dP/dP^nu: ratio of jump
            // probabilities times ratio of mark laws
            const double p_jump_base = -std::expm1(-theta_total * dt);
            const double nu_mark = cum[static_cast<std::size_t>(mark)] / theta_each;
            weight *= (p_jump_base * lambda) / (p_jump * theta_total * nu_mark);
          }
          regime = mark;
          ens.jump_logs_[p].emplace_back(ens.time_grid_[m + 1], mark);
        } else if (ens.tilted_) {
          weight *= std::exp(-theta_total * dt) / std::exp(-lambda * dt);
        }
        record(m + 1);
      }
    }
  });

  return ens;
}

MomentEstimate estimate_second_moment(const PathEnsemble& ensemble, double t) {
  const std::size_t k = ensemble.time_index(t);
  const std::size_t n = ensemble.n_paths();
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    double m2 = 0.0;
    for (int c = 0; c < ensemble.dim(); ++c) {
      const double v = ensemble.state(p, k, c);
      m2 += v * v;
    }
    const double contrib = ensemble.tilt_weight(p, k) * m2;
    sum += contrib;
    sum2 += contrib * contrib;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

std::vector<ContractionPoint> estimate_contraction(const ControlProblem& problem,
                                                   const Eigen::VectorXd& x,
                                                   const Eigen::VectorXd& x_prime,
                                                   const Eigen::VectorXd& a, double dt,
                                                   const std::vector<double>& ts,
                                                   std::size_t n_paths, std::uint64_t seed) {
  if ((x - x_prime).squaredNorm() == 0.0)
    throw std::invalid_argument("estimate_contraction: x == x'");
  if (!(dt > 0.0)) throw std::invalid_argument("estimate_contraction: dt must be positive");
  const int a0_index = find_control_index(problem, a);

  // map requested times to step indices
  std::vector<std::size_t> steps(ts.size());
  std::size_t max_step = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double raw = ts[i] / dt;
    const double rounded = std::round(raw);
    if (ts[i] < 0.0 || std::abs(raw - rounded) > 1e-9 * (1.0 + raw))
      throw std::invalid_argument("estimate_contraction: t must be a multiple of dt");
    steps[i] = static_cast<std::size_t>(rounded);
    max_step = std::max(max_step, steps[i]);
  }

  const int d = problem.dim_x;
  const std::size_t n_controls = problem.n_controls();
  const double theta_each = problem.control_rate();
  const double p_jump = -std::expm1(-problem.intensity_total * dt);

  // per-path values filled in parallel, reduced sequentially in path order so
  // the result is identical for any worker count
  std::vector<double> delta2_at(n_paths * ts.size(), 0.0);

  parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      auto eng = path_engine(seed, p);
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::uniform_real_distribution<double> unif(0.0, 1.0);

      Eigen::VectorXd xa = x, xb = x_prime, xi(d);
      int regime = a0_index;

      const auto accumulate = [&](std::size_t step_index) {
        const double delta2 = (xa - xb).squaredNorm();
        for (std::size_t i = 0; i < steps.size(); ++i)
          if (steps[i] == step_index) delta2_at[p * ts.size() + i] = delta2;
      };
      accumulate(0);

      for (std::size_t m = 0; m < max_step; ++m) {
        const Eigen::VectorXd& ac = problem.controls[static_cast<std::size_t>(regime)];
        for (int c = 0; c < d; ++c) xi[c] = gauss(eng);
        const Eigen::VectorXd noise = std::sqrt(dt) * xi;
        xa += problem.drift(xa, ac) * dt + problem.diffusion(xa, ac) * noise;
        xb += problem.drift(xb, ac) * dt + problem.diffusion(xb, ac) * noise;
        check_blow_up(xa, 1e6);
        check_blow_up(xb, 1e6);
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
        accumulate(m + 1);
      }
    }
  });

  std::vector<ContractionPoint> out(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t p = 0; p < n_paths; ++p) {
      const double v = delta2_at[p * ts.size() + i];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / static_cast<double>(n_paths);
    const double var = std::max(0.0, sum2 / static_cast<double>(n_paths) - mean * mean);
    out[i] = {ts[i], mean, std::sqrt(var / static_cast<double>(n_paths))};
  }
  return out;
}

double fitted_contraction_slope(const std::vector<ContractionPoint>& points) {
  double st = 0.0, sl = 0.0, stt = 0.0, stl = 0.0;
  std::size_t n = 0;
  for (const auto& pt : points) {
    if (pt.coupled_second_moment <= 0.0) continue;
    const double l = std::log(pt.coupled_second_moment);
    st += pt.t;
    sl += l;
    stt += pt.t * pt.t;
    stl += pt.t * l;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("fitted_contraction_slope: need two positive points");
  const double nn = static_cast<double>(n);
  const double denom = stt - st * st / nn;
  if (denom <= 0.0) throw std::invalid_argument("fitted_contraction_slope: degenerate times");
  return (stl - st * sl / nn) / denom;
}

EmpiricalMeasure estimate_invariant_measure(const ControlProblem& problem,
                                            const std::function<int(const Eigen::VectorXd&)>& feedback,
                                            double burn_in, std::size_t n_samples, double dt,
                                            std::size_t thinning, std::uint64_t seed,
                                            double blow_up_radius) {
  if (!(dt > 0.0)) throw std::invalid_argument("estimate_invariant_measure: dt must be positive");
  if (n_samples == 0) throw std::invalid_argument("estimate_invariant_measure: n_samples >= 1");
  if (thinning == 0) thinning = 1;

  const int d = problem.dim_x;
  auto eng = path_engine(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(d), xi(d);
  const auto step = [&]() {
    const int j = feedback(x);
    if (j < 0 || static_cast<std::size_t>(j) >= problem.n_controls())
      throw std::invalid_argument("estimate_invariant_measure: feedback returned a bad index");
    const Eigen::VectorXd& a = problem.controls[static_cast<std::size_t>(j)];
    for (int c = 0; c < d; ++c) xi[c] = gauss(eng);
    x += problem.drift(x, a) * dt + problem.diffusion(x, a) * (std::sqrt(dt) * xi);
    check_blow_up(x, blow_up_radius);
  };

  const std::size_t burn_steps = static_cast<std::size_t>(std::ceil(burn_in / dt));
  for (std::size_t m = 0; m < burn_steps; ++m) step();

  EmpiricalMeasure em;
  em.samples.resize(static_cast<Eigen::Index>(n_samples), d);
  em.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_samples),
                                         1.0 / static_cast<double>(n_samples));
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t m = 0; m < thinning; ++m) step();
    em.samples.row(static_cast<Eigen::Index>(s)) = x.transpose();
  }
  em.mean = em.samples.colwise().mean().transpose();
  em.second_moment = em.samples.rowwise().squaredNorm().mean();
  return em;
}

double EmpiricalMeasure::integrate(const std::function<double(const Eigen::VectorXd&)>& test) const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    acc += weights[i] * test(samples.row(i).transpose());
  return acc;
}

Eigen::VectorXd EmpiricalMeasure::variance_diagonal() const {
  Eigen::VectorXd var = Eigen::VectorXd::Zero(samples.cols());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Eigen::VectorXd dev = samples.row(i).transpose() - mean;
    var += weights[i] * dev.cwiseProduct(dev);
  }
  return var;
}

void export_paths_csv(const PathEnsemble& ensemble, const std::filesystem::path& file) {
  std::vector<std::string> header{"path", "t"};
  for (int c = 0; c < ensemble.dim(); ++c) header.push_back("x" + std::to_string(c));
  header.push_back("regime");
  header.push_back("tilt_weight");
  CsvWriter csv(file, header);
  std::vector<std::string> row(header.size());
  for (std::size_t p = 0; p < ensemble.n_paths(); ++p)
    for (std::size_t k = 0; k < ensemble.n_times(); ++k) {
      row[0] = std::to_string(p);
      row[1] = format_double(ensemble.time_grid()[k]);
      for (int c = 0; c < ensemble.dim(); ++c)
        row[2 + static_cast<std::size_t>(c)] = format_double(ensemble.state(p, k, c));
      row[2 + static_cast<std::size_t>(ensemble.dim())] = std::to_string(ensemble.regime(p, k));
      row[3 + static_cast<std::size_t>(ensemble.dim())] = format_double(ensemble.tilt_weight(p, k));
      csv.write_row(row);
    }
}

void export_jumps_csv(const PathEnsemble& ensemble, const std::filesystem::path& file) {
  CsvWriter csv(file, {"path", "jump_time", "new_control"});
  for (std::size_t p = 0; p < ensemble.n_paths(); ++p)
    for (const auto& [t, j] : ensemble.jump_log(p))
      csv.write_row(std::vector<std::string>{std::to_string(p), format_double(t), std::to_string(j)});
}

}  // namespace hjblab
