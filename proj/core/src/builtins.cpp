#include <sstream>
#include <stdexcept>

#include "hjblab/errors.hpp"
#include "hjblab/experiment.hpp"

namespace hjblab {

namespace {

// Pinned from a fine-grid run of the policy-iteration solver (h = 5e-4,
// beta = 1e-3, grid [-10, 10]); the same value is frozen in
// tests/golden/two_control_ou.json.
constexpr const char* kTwoControlLambda = "0.61276505659795066";

const char* kSingletonQuadratic = R"json({
  "seed": 20240817,
  "out_dir": "runs/ou_singleton_quadratic",
  "experiments": ["validate", "simulate", "pde", "bsde", "asymptotics"],
  "problem": {
    "family": "ou",
    "controls": [[0.0]],
    "mean_reversion": [-1.0],
    "drift_level": [0.0],
    "volatility": [1.4142135623730951],
    "gamma": 1.0,
    "intensity_total": 0.5,
    "cost": {"x_poly": [[0.0, 0.0, 1.0]], "y_coeff": 0.0, "kappa": null, "lip": 12.0},
    "data_h": {"x_poly": [0.0]}
  },
  "validate": {"n_samples": 10000, "box_radius": 6.0},
  "simulate": {
    "n_paths": 100, "dt": 0.01, "horizon": 10.0, "export_paths": true,
    "tilt_nu": 2.0, "tilt_bound_n": 1, "tilt_paths": 4000,
    "contraction": {"x": [1.0], "x_prime": [0.0], "dt": 0.001, "n_paths": 10000,
                    "ts": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]},
    "invariant": {"burn_in": 10.0, "n_samples": 20000, "dt": 0.01, "thinning": 100,
                  "control_index": 0}
  },
  "pde": {
    "bounds": [[-6.0, 6.0]], "h": 0.01, "boundary": "one-sided-extrapolation",
    "beta_schedule": [0.4, 0.2, 0.1, 0.05], "tol": 1e-9, "max_iter": 200,
    "parabolic": {"h": 0.02, "t_max": 50.0, "record_times": [10.0, 20.0, 50.0], "dt": 0.0,
                  "mode": "explicit"}
  },
  "bsde": {
    "x0": [0.0], "a0_index": 0, "beta": 0.5, "t_trunc": 14.0, "dt": 0.02,
    "n_paths": 10000, "n_list": [0, 2, 10, 50],
    "basis": {"family": "tensor-polynomial-times-regime-indicator", "degree": 3,
              "clip_radius": 6.0}
  },
  "asymptotics": {
    "t_list": [10.0, 20.0, 50.0], "probe_radius": 3.0,
    "closed_loop": {"horizon": 100.0, "dt": 0.01, "n_paths": 200}
  },
  "assertions": {
    "lambda_ref": 1.0,
    "invariant_var_ref": 1.0,
    "invariant_mean_ref": [0.0]
  }
})json";

const char* kSingletonDrifted = R"json({
  "seed": 20240818,
  "out_dir": "runs/ou_singleton_drifted",
  "experiments": ["validate", "simulate", "pde", "bsde", "asymptotics"],
  "problem": {
    "family": "ou",
    "controls": [[0.0]],
    "mean_reversion": [-1.0],
    "drift_level": [2.0],
    "volatility": [1.4142135623730951],
    "gamma": 1.0,
    "intensity_total": 0.5,
    "cost": {"x_poly": [[0.0, 0.0, 1.0]], "y_coeff": 0.0, "kappa": null, "lip": 12.0},
    "data_h": {"x_poly": [0.0]}
  },
  "validate": {"n_samples": 10000, "box_radius": 6.0},
  "simulate": {
    "n_paths": 100, "dt": 0.01, "horizon": 10.0, "export_paths": true,
    "tilt_nu": 2.0, "tilt_bound_n": 1, "tilt_paths": 4000,
    "contraction": {"x": [3.0], "x_prime": [1.0], "dt": 0.001, "n_paths": 10000,
                    "ts": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]},
    "invariant": {"burn_in": 10.0, "n_samples": 20000, "dt": 0.01, "thinning": 100,
                  "control_index": 0}
  },
  "pde": {
    "bounds": [[-6.0, 6.0]], "h": 0.01, "boundary": "one-sided-extrapolation",
    "beta_schedule": [0.4, 0.2, 0.1, 0.05], "tol": 1e-9, "max_iter": 200,
    "parabolic": {"h": 0.02, "t_max": 50.0, "record_times": [10.0, 20.0, 50.0], "dt": 0.0,
                  "mode": "explicit"}
  },
  "bsde": {
    "x0": [0.0], "a0_index": 0, "beta": 0.5, "t_trunc": 14.0, "dt": 0.02,
    "n_paths": 10000, "n_list": [0, 2, 10, 50],
    "basis": {"family": "tensor-polynomial-times-regime-indicator", "degree": 3,
              "clip_radius": 6.0}
  },
  "asymptotics": {
    "t_list": [10.0, 20.0, 50.0], "probe_radius": 3.0,
    "closed_loop": {"horizon": 100.0, "dt": 0.01, "n_paths": 200}
  },
  "assertions": {
    "lambda_ref": 5.0,
    "invariant_var_ref": 1.0,
    "invariant_mean_ref": [2.0]
  }
})json";

std::string two_control_config() {
  std::ostringstream out;
  out << R"json({
  "seed": 20240819,
  "out_dir": "runs/ou_two_control_linear",
  "experiments": ["validate", "simulate", "pde", "bsde", "asymptotics"],
  "problem": {
    "family": "ou",
    "controls": [[-1.0], [1.0]],
    "mean_reversion": [-1.0, -1.0],
    "drift_level": [-1.0, 1.0],
    "volatility": [1.0, 1.0],
    "gamma": 1.0,
    "intensity_total": 2.0,
    "cost": {"x_poly": [[0.0, -2.0, -1.0], [0.0, 2.0, -1.0]], "y_coeff": 0.0, "kappa": null,
             "lip": 14.0},
    "data_h": {"x_poly": [0.0]}
  },
  "validate": {"n_samples": 10000, "box_radius": 6.0},
  "simulate": {
    "n_paths": 100, "dt": 0.01, "horizon": 10.0, "export_paths": true,
    "tilt_nu": 1.5, "tilt_bound_n": 1, "tilt_paths": 4000,
    "contraction": {"x": [1.0], "x_prime": [0.0], "dt": 0.001, "n_paths": 10000,
                    "ts": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]},
    "invariant": {"burn_in": 10.0, "n_samples": 20000, "dt": 0.01, "thinning": 100,
                  "control_index": 0}
  },
  "pde": {
    "bounds": [[-6.0, 6.0]], "h": 0.01, "boundary": "one-sided-extrapolation",
    "beta_schedule": [0.4, 0.2, 0.1, 0.05], "tol": 1e-9, "max_iter": 200,
    "parabolic": {"h": 0.02, "t_max": 50.0, "record_times": [10.0, 20.0, 50.0], "dt": 0.0,
                  "mode": "explicit"}
  },
  "bsde": {
    "x0": [0.0], "a0_index": 0, "beta": 0.5, "t_trunc": 14.0, "dt": 0.02,
    "n_paths": 10000, "n_list": [0, 2, 10, 50],
    "basis": {"family": "tensor-polynomial-times-regime-indicator", "degree": 3,
              "clip_radius": 6.0}
  },
  "asymptotics": {
    "t_list": [10.0, 20.0, 50.0], "probe_radius": 3.0,
    "closed_loop": {"horizon": 100.0, "dt": 0.01, "n_paths": 200}
  },
  "assertions": {
    "lambda_ref": )json"
      << kTwoControlLambda << R"json(,
    "invariant_var_ref": 0.5,
    "invariant_mean_ref": [-1.0]
  }
})json";
  return out.str();
}

}  // namespace

std::vector<std::string> builtin_names() {
  return {"ou_singleton_drifted", "ou_singleton_quadratic", "ou_two_control_linear"};
}

std::string builtin_config_text(const std::string& name) {
  if (name == "ou_singleton_quadratic") return kSingletonQuadratic;
  if (name == "ou_singleton_drifted") return kSingletonDrifted;
  if (name == "ou_two_control_linear") return two_control_config();
  throw ConfigError("builtin", "unknown builtin instance: " + name);
}

std::string list_builtins() {
  std::ostringstream out;
  out << "builtin problem instances:\n";
  out << "  ou_singleton_drifted (lambda=5 closed form): controlled OU with drift level 2, "
         "f = x^2; invariant law N(2,1)\n";
  out << "  ou_singleton_quadratic (lambda=1 closed form): controlled OU, singleton control, "
         "f = x^2; v_beta(0) = 2/(beta(beta+2))\n";
  out << "  ou_two_control_linear (lambda=" << kTwoControlLambda
      << " fine-grid oracle): two-regime OU, b = -x + a, a in {-1,+1}, f = -x^2 + 2ax\n";
  return out.str();
}

}  // namespace hjblab
