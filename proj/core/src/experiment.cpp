#include "hjblab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hjblab/asymptotics.hpp"
#include "hjblab/bsde_solver.hpp"
#include "hjblab/csv.hpp"
#include "hjblab/errors.hpp"
#include "hjblab/forward_sim.hpp"
#include "hjblab/parallel.hpp"
#include "hjblab/rng.hpp"

namespace hjblab {

namespace {

using nlohmann::json;

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const json& require(const json& j, const std::string& key, const std::string& scope) {
  if (!j.contains(key)) throw ConfigError(scope + key, "missing required field");
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& scope) {
  try {
    return require(j, key, scope).get<T>();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(scope + key, e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

double eval_poly(const std::vector<double>& coeffs, double x) {
  double acc = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 0;) acc = acc * x + coeffs[k];
  return acc;
}

int control_lookup(const std::vector<Eigen::VectorXd>& controls, const Eigen::VectorXd& a) {
  for (std::size_t j = 0; j < controls.size(); ++j)
    if ((controls[j] - a).lpNorm<Eigen::Infinity>() <= 1e-12) return static_cast<int>(j);
  throw std::invalid_argument("control point not in the configured list");
}

ControlProblem build_problem(const json& jp) {
  const std::string scope = "problem.";
  const std::string family = get_as<std::string>(jp, "family", scope);
  if (family != "ou" && family != "custom-polynomial")
    throw ConfigError("problem.family", "unknown family (expected ou or custom-polynomial)");

  const auto raw_controls = get_as<std::vector<std::vector<double>>>(jp, "controls", scope);
  if (raw_controls.empty()) throw ConfigError("problem.controls", "control list is empty");
  std::vector<Eigen::VectorXd> controls;
  for (const auto& c : raw_controls) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(c.size()));
    for (std::size_t i = 0; i < c.size(); ++i) a[static_cast<Eigen::Index>(i)] = c[i];
    controls.push_back(std::move(a));
  }
  const std::size_t nj = controls.size();

  const double gamma = get_as<double>(jp, "gamma", scope);
  if (!(gamma > 0.0)) throw ConfigError("problem.gamma", "must be positive");
  const double intensity = get_or(jp, "intensity_total", 1.0);

  // running cost: f(x, a_j, y) = poly_j(x) + y_coeff * y
  const json& jcost = require(jp, "cost", scope);
  const auto x_polys = get_as<std::vector<std::vector<double>>>(jcost, "x_poly", "problem.cost.");
  if (x_polys.size() != nj)
    throw ConfigError("problem.cost.x_poly", "needs one coefficient list per control");
  const double y_coeff = get_or(jcost, "y_coeff", 0.0);
  if (y_coeff > 0.0)
    throw ConfigError("problem.cost.y_coeff", "must be <= 0 (f nonincreasing in y)");
  const double lip_f = get_as<double>(jcost, "lip", "problem.cost.");
  std::optional<double> kappa;
  if (jcost.contains("kappa") && !jcost.at("kappa").is_null())
    kappa = jcost.at("kappa").get<double>();
  else if (y_coeff < 0.0)
    kappa = -y_coeff;

  const json& jh = require(jp, "data_h", scope);
  const auto h_poly = get_as<std::vector<double>>(jh, "x_poly", "problem.data_h.");

  RunningCostFn cost = [x_polys, y_coeff, controls](const Eigen::VectorXd& x,
                                                    const Eigen::VectorXd& a, double y) {
    const int j = control_lookup(controls, a);
    return eval_poly(x_polys[static_cast<std::size_t>(j)], x[0]) + y_coeff * y;
  };
  ScalarFieldFn data_h = [h_poly](const Eigen::VectorXd& x) { return eval_poly(h_poly, x[0]); };
  const bool y_dep = y_coeff != 0.0;

  if (family == "ou") {
    const auto B = get_as<std::vector<double>>(jp, "mean_reversion", scope);
    const auto D = get_as<std::vector<double>>(jp, "drift_level", scope);
    const auto S = get_as<std::vector<double>>(jp, "volatility", scope);
    if (B.size() != nj || D.size() != nj || S.size() != nj)
      throw ConfigError("problem.mean_reversion",
                        "mean_reversion/drift_level/volatility need one entry per control");
    OuCoefficients coeffs;
    coeffs.mean_reversion = [B, controls](const Eigen::VectorXd& a) {
      return Eigen::MatrixXd::Constant(1, 1, B[static_cast<std::size_t>(control_lookup(controls, a))]);
    };
    coeffs.drift_level = [D, controls](const Eigen::VectorXd& a) {
      return Eigen::VectorXd::Constant(1, D[static_cast<std::size_t>(control_lookup(controls, a))]);
    };
    coeffs.volatility = [S, controls](const Eigen::VectorXd& a) {
      return Eigen::MatrixXd::Constant(1, 1, S[static_cast<std::size_t>(control_lookup(controls, a))]);
    };
    try {
      ControlProblem p = make_ou_problem(coeffs, controls, gamma, std::move(cost),
                                         std::move(data_h), y_dep, lip_f, kappa, intensity);
      return p;
    } catch (const std::invalid_argument& e) {
      throw ConfigError("problem.mean_reversion", e.what());
    }
  }

  // custom-polynomial: b(x, a_j) = drift_poly_j(x), sigma constant per control
  const auto drift_polys = get_as<std::vector<std::vector<double>>>(jp, "drift_poly", scope);
  const auto S = get_as<std::vector<double>>(jp, "volatility", scope);
  if (drift_polys.size() != nj || S.size() != nj)
    throw ConfigError("problem.drift_poly", "needs one entry per control");
  ControlProblem p;
  p.dim_x = 1;
  p.controls = controls;
  p.drift = [drift_polys, controls](const Eigen::VectorXd& x, const Eigen::VectorXd& a) {
    const int j = control_lookup(controls, a);
    return Eigen::VectorXd::Constant(1, eval_poly(drift_polys[static_cast<std::size_t>(j)], x[0]));
  };
  p.diffusion = [S, controls](const Eigen::VectorXd&, const Eigen::VectorXd& a) {
    return Eigen::MatrixXd::Constant(1, 1, S[static_cast<std::size_t>(control_lookup(controls, a))]);
  };
  p.running_cost = std::move(cost);
  p.data_h = std::move(data_h);
  p.gamma = gamma;
  p.lip_b_sigma = get_as<double>(jp, "lip_b_sigma", scope);
  p.lip_f = lip_f;
  p.kappa = kappa;
  p.intensity_total = intensity;
  p.cost_depends_on_y = y_dep;
  p.check_structure();
  return p;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = v[i];
  return x;
}

const std::vector<std::string> kPipeline{"validate", "simulate", "pde", "bsde", "asymptotics"};

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  if (!j.contains("seed")) throw ConfigError("seed", "missing required field (seed is mandatory)");
  cfg.seed = get_as<std::uint64_t>(j, "seed", "");
  cfg.workers = get_or(j, "workers", 0u);
  cfg.out_dir = get_or<std::string>(j, "out_dir", "out");
  cfg.experiments = get_or(j, "experiments", kPipeline);
  for (const auto& e : cfg.experiments)
    if (std::find(kPipeline.begin(), kPipeline.end(), e) == kPipeline.end())
      throw ConfigError("experiments", "unknown stage: " + e);

  cfg.problem = build_problem(require(j, "problem", ""));

  if (j.contains("validate")) {
    const json& jv = j.at("validate");
    cfg.validate.n_samples = get_or(jv, "n_samples", 10000);
    cfg.validate.box_radius = get_or(jv, "box_radius", 10.0);
    if (cfg.validate.n_samples < 1) throw ConfigError("validate.n_samples", "must be >= 1");
    if (!(cfg.validate.box_radius > 0.0)) throw ConfigError("validate.box_radius", "must be > 0");
  }

  if (j.contains("simulate")) {
    const json& js = j.at("simulate");
    cfg.simulate.n_paths = get_or<std::size_t>(js, "n_paths", 100);
    cfg.simulate.dt = get_or(js, "dt", 0.01);
    cfg.simulate.horizon = get_or(js, "horizon", 10.0);
    cfg.simulate.export_paths = get_or(js, "export_paths", true);
    cfg.simulate.tilt_nu = get_or(js, "tilt_nu", 2.0);
    cfg.simulate.tilt_bound_n = get_or(js, "tilt_bound_n", 2);
    cfg.simulate.tilt_paths = get_or<std::size_t>(js, "tilt_paths", 4000);
    if (!(cfg.simulate.dt > 0.0)) throw ConfigError("simulate.dt", "must be > 0");
    if (js.contains("contraction")) {
      const json& jc = js.at("contraction");
      ContractionParams cp;
      cp.x = to_vector(get_as<std::vector<double>>(jc, "x", "simulate.contraction."));
      cp.x_prime = to_vector(get_as<std::vector<double>>(jc, "x_prime", "simulate.contraction."));
      cp.dt = get_or(jc, "dt", 1e-3);
      cp.n_paths = get_or<std::size_t>(jc, "n_paths", 10000);
      cp.ts = get_as<std::vector<double>>(jc, "ts", "simulate.contraction.");
      cfg.simulate.contraction = std::move(cp);
    }
    if (js.contains("invariant")) {
      const json& ji = js.at("invariant");
      InvariantParams ip;
      ip.burn_in = get_or(ji, "burn_in", 10.0);
      ip.n_samples = get_or<std::size_t>(ji, "n_samples", 20000);
      ip.dt = get_or(ji, "dt", 0.01);
      ip.thinning = get_or<std::size_t>(ji, "thinning", 100);
      ip.control_index = get_or(ji, "control_index", 0);
      if (ip.control_index < 0 ||
          static_cast<std::size_t>(ip.control_index) >= cfg.problem.n_controls())
        throw ConfigError("simulate.invariant.control_index", "out of range");
      cfg.simulate.invariant = std::move(ip);
    }
  }

  if (j.contains("pde")) {
    const json& jd = j.at("pde");
    const auto bounds = get_as<std::vector<std::vector<double>>>(jd, "bounds", "pde.");
    for (const auto& b : bounds) {
      if (b.size() != 2 || !(b[0] < b[1])) throw ConfigError("pde.bounds", "each entry is [lo, hi]");
      cfg.pde.bounds.emplace_back(b[0], b[1]);
    }
    cfg.pde.h = get_as<double>(jd, "h", "pde.");
    if (!(cfg.pde.h > 0.0)) throw ConfigError("pde.h", "must be > 0");
    const std::string bp = get_or<std::string>(jd, "boundary", "one-sided-extrapolation");
    if (bp == "one-sided-extrapolation")
      cfg.pde.boundary = BoundaryPolicy::one_sided_extrapolation;
    else if (bp == "dirichlet-from-growth")
      cfg.pde.boundary = BoundaryPolicy::dirichlet_from_growth;
    else
      throw ConfigError("pde.boundary", "unknown boundary policy");
    cfg.pde.beta_schedule = get_as<std::vector<double>>(jd, "beta_schedule", "pde.");
    for (double b : cfg.pde.beta_schedule)
      if (!(b > 0.0)) throw ConfigError("pde.beta_schedule", "betas must be positive");
    cfg.pde.tol = get_or(jd, "tol", 1e-9);
    cfg.pde.max_iter = get_or(jd, "max_iter", 200);
    if (jd.contains("parabolic")) {
      const json& jq = jd.at("parabolic");
      cfg.pde.parabolic.h = get_or(jq, "h", cfg.pde.h);
      cfg.pde.parabolic.t_max = get_or(jq, "t_max", 50.0);
      cfg.pde.parabolic.record_times = get_or(jq, "record_times", std::vector<double>{});
      cfg.pde.parabolic.dt = get_or(jq, "dt", 0.0);
      const std::string mode = get_or<std::string>(jq, "mode", "explicit");
      if (mode == "explicit")
        cfg.pde.parabolic.stepping = TimeStepping::explicit_euler;
      else if (mode == "implicit")
        cfg.pde.parabolic.stepping = TimeStepping::implicit_euler;
      else
        throw ConfigError("pde.parabolic.mode", "expected explicit or implicit");
    }
  }

  if (j.contains("bsde")) {
    const json& jb = j.at("bsde");
    cfg.bsde.x0 = to_vector(get_or(jb, "x0", std::vector<double>(1, 0.0)));
    cfg.bsde.a0_index = get_or(jb, "a0_index", 0);
    if (cfg.bsde.a0_index < 0 ||
        static_cast<std::size_t>(cfg.bsde.a0_index) >= cfg.problem.n_controls())
      throw ConfigError("bsde.a0_index", "out of range");
    cfg.bsde.beta = get_or(jb, "beta", 0.5);
    if (!(cfg.bsde.beta > 0.0)) throw ConfigError("bsde.beta", "must be > 0");
    cfg.bsde.t_trunc = get_or(jb, "t_trunc", 14.0);
    cfg.bsde.dt = get_or(jb, "dt", 0.02);
    if (!(cfg.bsde.dt > 0.0)) throw ConfigError("bsde.dt", "must be > 0");
    cfg.bsde.n_paths = get_or<std::size_t>(jb, "n_paths", 10000);
    cfg.bsde.n_list = get_or(jb, "n_list", std::vector<int>{0, 2, 10, 50});
    if (jb.contains("basis")) {
      const json& jbs = jb.at("basis");
      const std::string fam =
          get_or<std::string>(jbs, "family", "tensor-polynomial-times-regime-indicator");
      if (fam == "polynomial")
        cfg.bsde.basis.family = BasisFamily::polynomial;
      else if (fam == "tensor-polynomial-times-regime-indicator")
        cfg.bsde.basis.family = BasisFamily::tensor_polynomial_regime;
      else
        throw ConfigError("bsde.basis.family", "unknown basis family");
      cfg.bsde.basis.degree = get_or(jbs, "degree", 3);
      if (cfg.bsde.basis.degree < 1) throw ConfigError("bsde.basis.degree", "must be >= 1");
      cfg.bsde.basis.clip_radius = get_or(jbs, "clip_radius", 10.0);
    }
  }

  if (j.contains("asymptotics")) {
    const json& ja = j.at("asymptotics");
    cfg.asymptotics.t_list = get_or(ja, "t_list", std::vector<double>{10.0, 20.0, 50.0});
    cfg.asymptotics.probe_radius = get_or(ja, "probe_radius", 3.0);
    if (ja.contains("closed_loop")) {
      const json& jc = ja.at("closed_loop");
      cfg.asymptotics.closed_loop.horizon = get_or(jc, "horizon", 100.0);
      cfg.asymptotics.closed_loop.dt = get_or(jc, "dt", 0.01);
      cfg.asymptotics.closed_loop.n_paths = get_or<std::size_t>(jc, "n_paths", 200);
    }
  }

  if (j.contains("assertions")) {
    const json& jt = j.at("assertions");
    if (jt.contains("lambda_ref") && !jt.at("lambda_ref").is_null())
      cfg.assertions.lambda_ref = jt.at("lambda_ref").get<double>();
    cfg.assertions.lambda_routes_rel = get_or(jt, "lambda_routes_rel", 0.05);
    cfg.assertions.bsde_vs_pde_rel = get_or(jt, "bsde_vs_pde_rel", 0.05);
    cfg.assertions.ergodic_residual_core = get_or(jt, "ergodic_residual_core", 0.05);
    cfg.assertions.contraction_slope_rel = get_or(jt, "contraction_slope_rel", 0.10);
    cfg.assertions.invariant_var_rel = get_or(jt, "invariant_var_rel", 0.05);
    if (jt.contains("invariant_var_ref") && !jt.at("invariant_var_ref").is_null())
      cfg.assertions.invariant_var_ref = jt.at("invariant_var_ref").get<double>();
    if (jt.contains("invariant_mean_ref") && !jt.at("invariant_mean_ref").is_null())
      cfg.assertions.invariant_mean_ref =
          to_vector(jt.at("invariant_mean_ref").get<std::vector<double>>());
  }

  return cfg;
}

}  // namespace

RunConfig load_config_text(const std::string& json_text, const RunOverrides& overrides) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError("(json)", e.what());
  }
  if (overrides.out_dir) j["out_dir"] = *overrides.out_dir;
  if (overrides.seed) j["seed"] = *overrides.seed;
  if (overrides.workers) j["workers"] = *overrides.workers;
  if (overrides.experiments) j["experiments"] = *overrides.experiments;

  RunConfig cfg = parse_config(j);
  cfg.canonical_text = j.dump(2) + "\n";
  cfg.config_hash = fnv1a64(cfg.canonical_text);
  return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path, const RunOverrides& overrides) {
  const std::string name = path.string();
  if (name.rfind("builtin:", 0) == 0)
    return load_config_text(builtin_config_text(name.substr(8)), overrides);
  std::ifstream in(path);
  if (!in) throw ConfigError("(config)", "cannot open " + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_text(ss.str(), overrides);
}

namespace {

struct StageContext {
  const RunConfig& cfg;
  RunReport& report;
  std::filesystem::path out;

  std::optional<ErgodicPair> pair_fine;    // on the pde grid
  std::optional<Grid> pde_grid;

  void headline(const std::string& key, double value) { report.headline[key] = value; }
  std::filesystem::path artifact(const std::string& rel) {
    report.artifacts.push_back(rel);
    return out / rel;
  }
  void status(const std::string& name, bool passed, std::string note = "") {
    report.experiments.push_back({name, passed, std::move(note)});
  }
};

void fail_note(bool& pass, std::string& note, const std::string& what) {
  pass = false;
  if (!note.empty()) note += "; ";
  note += what;
}

void run_validate(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ValidationReport rep =
      validate_problem(cfg.problem, cfg.validate.n_samples, cfg.validate.box_radius, cfg.seed);
  ctx.headline("validate.margin_lipschitz_b_sigma", rep.lipschitz_b_sigma.worst_margin);
  ctx.headline("validate.margin_dissipativity", rep.dissipativity.worst_margin);
  ctx.headline("validate.margin_lipschitz_f", rep.lipschitz_f.worst_margin);
  ctx.headline("validate.margin_monotone_f", rep.monotone_f.worst_margin);
  ctx.headline("validate.margin_strict_decay", rep.strict_decay.worst_margin);
  ctx.headline("validate.samples", rep.sample_count);
  std::string note;
  bool pass = true;
  if (!rep.all_pass()) fail_note(pass, note, "a standing assumption failed on samples");
  ctx.status("validate", pass, note);
}

void run_simulate(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& p = cfg.simulate;
  const ControlProblem& problem = cfg.problem;
  bool pass = true;
  std::string note;

  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(problem.dim_x);
  const Eigen::VectorXd& a0 = problem.controls.front();

  {
    const PathEnsemble ens = simulate_paths(problem, x0, a0, p.dt, p.horizon, p.n_paths,
                                            std::nullopt, mix64(cfg.seed ^ 1));
    double jumps = 0.0;
    for (std::size_t q = 0; q < ens.n_paths(); ++q)
      jumps += static_cast<double>(ens.jump_log(q).size());
    ctx.headline("simulate.mean_jump_count", jumps / static_cast<double>(ens.n_paths()));
    ctx.headline("simulate.expected_jump_count", problem.intensity_total * p.horizon);
    if (p.export_paths) {
      export_paths_csv(ens, ctx.artifact("paths.csv"));
      export_jumps_csv(ens, ctx.artifact("jumps.csv"));
    }
  }

  {
    const double nu = p.tilt_nu;
    TiltSpec tilt{[nu](double, const Eigen::VectorXd&) { return nu; }, p.tilt_bound_n};
    const PathEnsemble ens = simulate_paths(problem, x0, a0, p.dt, p.horizon, p.tilt_paths, tilt,
                                            mix64(cfg.seed ^ 2));
    const std::size_t last = ens.n_times() - 1;
    double wsum = 0.0, wsum2 = 0.0, jumps = 0.0;
    for (std::size_t q = 0; q < ens.n_paths(); ++q) {
      const double w = ens.tilt_weight(q, last);
      wsum += w;
      wsum2 += w * w;
      jumps += static_cast<double>(ens.jump_log(q).size());
    }
    const double n = static_cast<double>(ens.n_paths());
    const double mean = wsum / n;
    const double se = std::sqrt(std::max(0.0, wsum2 / n - mean * mean) / n);
    ctx.headline("simulate.tilt_weight_mean", mean);
    ctx.headline("simulate.tilt_weight_se", se);
    ctx.headline("simulate.tilt_mean_jump_count", jumps / n);
    if (std::abs(mean - 1.0) > 3.0 * se + 1e-9)
      fail_note(pass, note, "tilt weight mean departed from 1 beyond 3 SE");
  }

  if (p.contraction) {
    const auto& cp = *p.contraction;
    const auto points = estimate_contraction(problem, cp.x, cp.x_prime, a0, cp.dt, cp.ts,
                                             cp.n_paths, mix64(cfg.seed ^ 3));
    const double d2 = (cp.x - cp.x_prime).squaredNorm();
    CsvWriter csv(ctx.artifact("contraction.csv"), {"t", "m2", "se", "bound"});
    for (const auto& pt : points)
      csv.write_row(std::vector<double>{pt.t, pt.coupled_second_moment, pt.standard_error,
                                        d2 * std::exp(-2.0 * problem.gamma * pt.t)});
    const double slope = fitted_contraction_slope(points);
    ctx.headline("simulate.contraction_slope", slope);
    if (std::abs(slope + 2.0 * problem.gamma) >
        cfg.assertions.contraction_slope_rel * 2.0 * problem.gamma)
      fail_note(pass, note, "contraction slope off -2 gamma beyond tolerance");
    for (const auto& pt : points) {
      const double bound = d2 * std::exp(-2.0 * problem.gamma * pt.t);
      const double rel_se =
          pt.coupled_second_moment > 0.0 ? pt.standard_error / pt.coupled_second_moment : 0.0;
      if (pt.coupled_second_moment > bound * (1.0 + 3.0 * rel_se) + 1e-12)
        fail_note(pass, note, "coupled second moment exceeded the dissipativity bound");
    }
  }

  if (p.invariant) {
    const auto& ip = *p.invariant;
    const int fixed = ip.control_index;
    const EmpiricalMeasure em = estimate_invariant_measure(
        problem, [fixed](const Eigen::VectorXd&) { return fixed; }, ip.burn_in, ip.n_samples,
        ip.dt, ip.thinning, mix64(cfg.seed ^ 4));
    const Eigen::VectorXd var = em.variance_diagonal();
    ctx.headline("simulate.invariant_mean_0", em.mean[0]);
    ctx.headline("simulate.invariant_var_0", var[0]);
    ctx.headline("simulate.invariant_second_moment", em.second_moment);
    const double mean_se = std::sqrt(var[0] / static_cast<double>(ip.n_samples)) *
                           3.0;  // crude iid SE; thinning decorrelates
    if (cfg.assertions.invariant_mean_ref &&
        std::abs(em.mean[0] - (*cfg.assertions.invariant_mean_ref)[0]) > 3.0 * mean_se + 1e-9)
      fail_note(pass, note, "invariant mean off its reference beyond 3 SE");
    if (cfg.assertions.invariant_var_ref &&
        std::abs(var[0] - *cfg.assertions.invariant_var_ref) >
            cfg.assertions.invariant_var_rel * *cfg.assertions.invariant_var_ref)
      fail_note(pass, note, "invariant variance off its reference beyond tolerance");
  }

  ctx.status("simulate", pass, note);
}

void run_pde(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& p = cfg.pde;
  const ControlProblem& problem = cfg.problem;
  bool pass = true;
  std::string note;

  const Grid grid(p.bounds, p.h, p.boundary);
  ctx.pde_grid = grid;

  double lip_max = 0.0, growth_max = 0.0;
  for (double beta : p.beta_schedule) {
    const ValueField f = solve_discounted(problem, grid, beta, p.tol, p.max_iter);
    lip_max = std::max(lip_max, max_difference_quotient(f));
    growth_max = std::max(growth_max, f.fitted_growth_const);
    std::ostringstream name;
    name << "fields/discounted_beta_" << beta;
    export_field_csv(f, ctx.artifact(name.str() + ".csv"), ctx.artifact(name.str() + ".meta"));
    ctx.headline("pde.v_beta_" + std::to_string(beta) + "_at_anchor",
                 f.values[static_cast<Eigen::Index>(grid.anchor_node())]);
  }
  ctx.headline("pde.lipschitz_max", lip_max);
  ctx.headline("pde.growth_const_max", growth_max);
  // Lipschitz bound L2/gamma with discretization slack
  const double lip_bound = 1.1 * problem.lip_f / problem.gamma + 10.0 * p.h;
  if (lip_max > lip_bound) fail_note(pass, note, "discrete Lipschitz bound violated");

  const ErgodicPair pair =
      solve_ergodic_vanishing_discount(problem, grid, p.beta_schedule, p.tol);
  ctx.headline("pde.lambda_vd", pair.lambda);
  ctx.headline("pde.ergodic_residual_full", pair.residual);
  const double res_core =
      ergodic_residual_within(problem, grid, pair, cfg.asymptotics.probe_radius);
  ctx.headline("pde.ergodic_residual_core", res_core);
  if (res_core > cfg.assertions.ergodic_residual_core)
    fail_note(pass, note, "ergodic residual on the probe compact above tolerance");
  if (cfg.assertions.lambda_ref &&
      std::abs(pair.lambda - *cfg.assertions.lambda_ref) >
          cfg.assertions.lambda_routes_rel * (1.0 + std::abs(*cfg.assertions.lambda_ref)))
    fail_note(pass, note, "vanishing-discount lambda off its reference");
  for (const auto& w : pair.warnings) fail_note(pass, note, w);

  export_field_csv(pair.phi, ctx.artifact("fields/ergodic_phi.csv"),
                   ctx.artifact("fields/ergodic_phi.meta"));

  const Policy policy = extract_feedback(problem, grid, pair);
  {
    CsvWriter csv(ctx.artifact("fields/policy.csv"), {"x0", "control_index"});
    for (std::size_t i = 0; i < grid.size(); ++i)
      csv.write_row(std::vector<std::string>{format_double(grid.node(i)[0]),
                                             std::to_string(policy.control_index[i])});
  }
  ctx.pair_fine = pair;
  ctx.status("pde", pass, note);
}

void run_bsde(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& p = cfg.bsde;
  const ControlProblem& problem = cfg.problem;
  bool pass = true;
  std::string note;

  const Eigen::VectorXd& a0 = problem.controls[static_cast<std::size_t>(p.a0_index)];
  std::vector<BsdeSolution> sols;
  for (int n : p.n_list)
    sols.push_back(solve_penalized_bsde(problem, p.x0, a0, p.beta, n, p.t_trunc, p.dt, p.n_paths,
                                        p.basis, mix64(cfg.seed ^ 5)));

  {
    CsvWriter csv(ctx.artifact("bsde_sweep.csv"), {"n", "y0", "se", "gap"});
    for (std::size_t i = 0; i < sols.size(); ++i)
      csv.write_row(std::vector<double>{static_cast<double>(p.n_list[i]), sols[i].y0,
                                        sols[i].y0_standard_error, jump_constraint_gap(sols[i])});
  }
  export_bsde_diagnostics_csv(sols.back(), ctx.artifact("bsde_diagnostics.csv"));

  for (std::size_t i = 0; i < sols.size(); ++i) {
    ctx.headline("bsde.y0_n" + std::to_string(p.n_list[i]), sols[i].y0);
    ctx.headline("bsde.gap_n" + std::to_string(p.n_list[i]), jump_constraint_gap(sols[i]));
  }
  ctx.headline("bsde.y0_se", sols.back().y0_standard_error);

  // monotone in n up to 2-SE violations (common random numbers)
  for (std::size_t i = 1; i < sols.size(); ++i)
    if (sols[i].y0 <
        sols[i - 1].y0 - 2.0 * (sols[i].y0_standard_error + sols[i - 1].y0_standard_error))
      fail_note(pass, note, "penalized Y0 sequence not nondecreasing in n");

  // constraint gap shrinks from the first positive penalty to the largest
  std::size_t first_pos = 0;
  while (first_pos < sols.size() && p.n_list[first_pos] <= 0) ++first_pos;
  if (first_pos < sols.size()) {
    const double g_lo = jump_constraint_gap(sols[first_pos]);
    const double g_hi = jump_constraint_gap(sols.back());
    if (g_hi > g_lo + 1e-12) fail_note(pass, note, "jump constraint gap grew with n");
  }

  // identification against the grid solver at the same beta
  if (ctx.pde_grid) {
    const ValueField v = solve_discounted(problem, *ctx.pde_grid, p.beta, cfg.pde.tol,
                                          cfg.pde.max_iter);
    const double v_at_x0 = v.values[static_cast<Eigen::Index>(ctx.pde_grid->nearest_node(p.x0))];
    ctx.headline("bsde.pde_value", v_at_x0);
    const double rel =
        std::abs(sols.back().y0 - v_at_x0) / std::max(1e-12, std::abs(v_at_x0));
    ctx.headline("bsde.vs_pde_rel", rel);
    if (rel > cfg.assertions.bsde_vs_pde_rel)
      fail_note(pass, note, "BSDE Y0 vs PDE value relative gap above tolerance");
  }

  // a-independence of the limit (Theorem: the value does not depend on the
  // start regime)
  if (problem.n_controls() > 1) {
    const Eigen::VectorXd& alt = problem.controls.back();
    if ((alt - a0).lpNorm<Eigen::Infinity>() > 0) {
      const BsdeSolution other =
          solve_penalized_bsde(problem, p.x0, alt, p.beta, p.n_list.back(), p.t_trunc, p.dt,
                               p.n_paths, p.basis, mix64(cfg.seed ^ 5));
      ctx.headline("bsde.y0_alt_start", other.y0);
      const double slack =
          3.0 * (sols.back().y0_standard_error + other.y0_standard_error) + 5e-2;
      if (std::abs(other.y0 - sols.back().y0) > slack)
        fail_note(pass, note, "Y0 depends on the start regime beyond tolerance");
    }
  }

  ctx.status("bsde", pass, note);
}

void run_asymptotics(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& p = cfg.asymptotics;
  const ControlProblem& problem = cfg.problem;
  bool pass = true;
  std::string note;

  const Grid coarse(cfg.pde.bounds, cfg.pde.parabolic.h, cfg.pde.boundary);
  const ErgodicPair pair_coarse =
      solve_ergodic_vanishing_discount(problem, coarse, cfg.pde.beta_schedule, cfg.pde.tol);
  const double lambda_vd = ctx.pair_fine ? ctx.pair_fine->lambda : pair_coarse.lambda;
  const double lambda_used = cfg.assertions.lambda_ref.value_or(lambda_vd);

  const ConvergenceCurve lr = long_run_average(problem, coarse, p.t_list, lambda_used,
                                               cfg.pde.parabolic.dt, cfg.pde.parabolic.stepping);
  export_curve_csv(lr, ctx.artifact("curves/long_run.csv"));
  const double lambda_longrun = lr.points.back().value;
  ctx.headline("asym.lambda_longrun", lambda_longrun);
  ctx.headline("asym.longrun_tail_deviation", lr.tail_deviation);

  const ConvergenceCurve gap = renormalized_gap(problem, coarse, pair_coarse, p.t_list,
                                                p.probe_radius, cfg.pde.parabolic.dt,
                                                cfg.pde.parabolic.stepping);
  export_curve_csv(gap, ctx.artifact("curves/w_gap.csv"));
  ctx.headline("asym.w_oscillation_last", gap.points.back().aux);
  ctx.headline("asym.w_constant_estimate", gap.target);
  double w_sup = 0.0;
  for (const auto& pt : gap.points) w_sup = std::max(w_sup, pt.value);
  ctx.headline("asym.w_bound_sup", w_sup);
  if (w_sup > 2.0 * std::max(gap.points.front().value, 1e-6))
    fail_note(pass, note, "renormalized gap grew beyond twice its first recorded value");

  double lambda_cl = std::numeric_limits<double>::quiet_NaN();
  if (!problem.cost_depends_on_y) {
    const Grid& pol_grid = ctx.pde_grid ? *ctx.pde_grid : coarse;
    const ErgodicPair& pol_pair = ctx.pair_fine ? *ctx.pair_fine : pair_coarse;
    const Policy policy = extract_feedback(problem, pol_grid, pol_pair);
    const auto est = verify_lambda_via_control(problem, policy, p.closed_loop.horizon,
                                               p.closed_loop.dt, p.closed_loop.n_paths,
                                               mix64(cfg.seed ^ 6));
    lambda_cl = est.value;
    ctx.headline("asym.lambda_closedloop", est.value);
    ctx.headline("asym.lambda_closedloop_se", est.standard_error);

    // every constant policy is suboptimal (up to MC error)
    for (std::size_t jc = 0; jc < problem.n_controls(); ++jc) {
      const auto sub = verify_lambda_via_control(problem, constant_policy(pol_grid,
                                                                          static_cast<int>(jc)),
                                                 p.closed_loop.horizon, p.closed_loop.dt,
                                                 p.closed_loop.n_paths, mix64(cfg.seed ^ (7 + jc)));
      ctx.headline("asym.constant_policy_" + std::to_string(jc), sub.value);
      if (sub.value > lambda_used + 3.0 * sub.standard_error + 1e-9)
        fail_note(pass, note, "a constant policy beat lambda beyond 3 SE");
    }
  }

  // Tauberian consistency across the lambda routes
  const double tol = cfg.assertions.lambda_routes_rel * (1.0 + std::abs(lambda_vd));
  ctx.headline("asym.lambda_vd", lambda_vd);
  if (std::abs(lambda_vd - lambda_longrun) > tol)
    fail_note(pass, note, "vanishing-discount and long-run lambda disagree");
  if (!std::isnan(lambda_cl)) {
    if (std::abs(lambda_vd - lambda_cl) > tol)
      fail_note(pass, note, "vanishing-discount and closed-loop lambda disagree");
    if (std::abs(lambda_longrun - lambda_cl) > tol)
      fail_note(pass, note, "long-run and closed-loop lambda disagree");
  }
  if (cfg.assertions.lambda_ref) {
    const double ref = *cfg.assertions.lambda_ref;
    const double rtol = cfg.assertions.lambda_routes_rel * (1.0 + std::abs(ref));
    if (std::abs(lambda_longrun - ref) > rtol)
      fail_note(pass, note, "long-run lambda off its reference");
    if (!std::isnan(lambda_cl) && std::abs(lambda_cl - ref) > rtol)
      fail_note(pass, note, "closed-loop lambda off its reference");
  }

  ctx.status("asymptotics", pass, note);
}

void write_reports(const RunConfig& cfg, RunReport& report, const std::filesystem::path& out) {
  {
    std::ofstream f(out / "resolved_config.json", std::ios::binary);
    f << cfg.canonical_text;
  }
  {
    std::ofstream f(out / "report.kv", std::ios::binary);
    f << "config_hash=" << hash_hex(report.config_hash) << "\n";
    for (const auto& [k, v] : report.headline) f << k << "=" << format_double(v) << "\n";
    for (const auto& e : report.experiments)
      f << "status." << e.name << "=" << (e.passed ? "pass" : "fail") << "\n";
  }
  {
    json j;
    j["config_hash"] = hash_hex(report.config_hash);
    j["wall_clock_seconds"] = report.wall_clock_seconds;
    json exps = json::array();
    for (const auto& e : report.experiments)
      exps.push_back({{"name", e.name}, {"passed", e.passed}, {"note", e.note}});
    j["experiments"] = exps;
    json head;
    for (const auto& [k, v] : report.headline) head[k] = v;
    j["headline"] = head;
    j["artifacts"] = report.artifacts;
    std::ofstream f(out / "run_report.json", std::ios::binary);
    f << j.dump(2) << "\n";
  }
  report.artifacts.push_back("resolved_config.json");
  report.artifacts.push_back("report.kv");
  report.artifacts.push_back("run_report.json");
}

}  // namespace

RunReport run_experiment(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  set_worker_count(cfg.workers);

  const std::filesystem::path out(cfg.out_dir);
  std::filesystem::create_directories(out);

  RunReport report;
  report.config_hash = cfg.config_hash;
  StageContext ctx{cfg, report, out, std::nullopt, std::nullopt};

  const auto selected = [&](const char* name) {
    return std::find(cfg.experiments.begin(), cfg.experiments.end(), name) !=
           cfg.experiments.end();
  };
  if (selected("validate")) run_validate(ctx);
  if (selected("simulate")) run_simulate(ctx);
  if (selected("pde")) run_pde(ctx);
  if (selected("bsde")) run_bsde(ctx);
  if (selected("asymptotics")) run_asymptotics(ctx);

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_reports(cfg, report, out);
  return report;
}

}  // namespace hjblab
