#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "panelbc/family.hpp"
#include "panelbc/panel_data.hpp"
#include "panelbc/two_way.hpp"

namespace panelbc {

struct SolveOptions {
  // Max-norm of the gradient, each block divided by its observation count.
  double tol_grad = 1e-9;
  double tol_proj = 1e-10;
  std::size_t max_outer = 100;
  std::size_t max_inner = 500;  // only used when beta is held fixed
  // Binary outcomes: |u| beyond this is treated as separation. Poisson: u
  // below minus this.
  double separation_bound = 30.0;
  TwoWayOptions two_way;
  // Subfits: fill only beta, alpha, gamma, u, loglik and dispersion.
  bool parameters_only = false;
};

// Warm start. Empty vectors fall back to the default starting values.
struct FitStart {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd gamma;
};

struct FitResult {
  std::string family;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd gamma;  // observation-count weighted mean zero
  Eigen::VectorXd u;
  Eigen::VectorXd omega;  // expected weights (floored)

  // Observed derivatives of the log-density at the fit, and their model
  // expectations E[g1 g2 | u], E[g3 | u]. Linear family: divided by the
  // fitted dispersion.
  Eigen::VectorXd g1, g2, g3;
  Eigen::VectorXd expected_g1g2, expected_g3;

  Eigen::MatrixXd xtilde;  // omega-weighted two-way projection of x
  Eigen::MatrixXd H;       // (1/n) sum omega x~ x~'
  Eigen::VectorXd score;   // sum x~ g1 (profile score)

  double loglik = 0.0;
  double dispersion = 1.0;  // sigma^2 for the linear family
  double max_grad = 0.0;    // relative max-norm of the full gradient
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> loglik_path;  // one entry per accepted iteration
};

// Two-way fixed effects MLE. Throws ValidationError for a singular Hessian or a
// disconnected panel, SeparationError for diverging indices, ConvergenceError
// otherwise.
FitResult fit(const PanelData& data, const Family& family, const SolveOptions& opts = {},
              const FitStart& start = {});

// Maximizes over (alpha, gamma) with beta held fixed and fills the same output
// quantities at that point.
FitResult profile_at(const PanelData& data, const Family& family, const Eigen::VectorXd& beta,
                     const SolveOptions& opts = {}, const FitStart& start = {});

// H^{-1} / n.
Eigen::MatrixXd vcov_beta(const FitResult& fit, const PanelIndex& index);

// Moment-inversion starting values for alpha and gamma at beta = 0.
FitStart default_start(const PanelData& data, const Family& family);

// Warm start for a subpanel from a parent fit.
FitStart restrict_start(const FitResult& parent, const Subpanel& sub);

}  // namespace panelbc
