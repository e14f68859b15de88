#pragma once

// Test-side reference implementations. Nothing here calls the estimation code
// of the library; panels are built with PanelData and that is all.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "panelbc/panel_data.hpp"
#include "panelbc/rng.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Log-density of one observation and its derivatives in the index, written
// out independently of the library families.
struct Derivs {
  double g, g1, g2;
};
Derivs loglik(const std::string& family, double y, double u);

// Full Newton on (beta, alpha_1..N, gamma_2..T) with explicit dummy columns
// and a dense Hessian.
struct DenseFit {
  VectorXd beta;
  VectorXd u;
  double loglik = 0.0;
  bool converged = false;
};
DenseFit dense_dummy_newton(const panelbc::PanelData& data, const std::string& family,
                            double tol = 1e-13, int max_iter = 200);

// Weighted least-squares residual of every column of x on the unit and period
// dummies (dense QR on the explicit design).
MatrixXd dense_projection(const panelbc::PanelData& data, const MatrixXd& x, const VectorXd& w);

// Two-way within OLS on y and x with unit weights.
VectorXd within_ols(const panelbc::PanelData& data);

// Classical two-way demeaning x - xbar_i - xbar_t + xbar of a balanced panel.
MatrixXd balanced_demean(const panelbc::PanelData& data, const MatrixXd& x);

double central_difference(const std::function<double(double)>& f, double x, double h);

// Random panel for the given family. With `missing` > 0 that fraction of cells
// is removed (keeping every unit and period observed). Binary and count
// outcomes are redrawn until every unit and period has outcome variation and
// the graph is connected. Returns false if that failed after many attempts.
bool random_panel(panelbc::Rng& rng, std::size_t N, std::size_t T, std::size_t d,
                  const std::string& family, double missing, panelbc::PanelData& out);

// Panel from parallel vectors of zero-based ids.
panelbc::PanelData make_panel(const std::vector<std::size_t>& unit,
                              const std::vector<std::size_t>& period, const std::vector<double>& y,
                              const std::vector<std::vector<double>>& x);

}  // namespace oracle

namespace oracle {

// Monte Carlo bias of the two-way within OLS estimator of rho in
// y_it = rho y_i,t-1 + a_i + g_t + e_it, all shocks standard normal and y_i0
// drawn from the stationary law given a_i. Own generator, balanced demeaning.
struct NickellBias {
  double bias, se;
};
NickellBias nickell_bias(double rho, std::size_t N, std::size_t T, std::size_t reps, std::uint64_t seed);

}  // namespace oracle
