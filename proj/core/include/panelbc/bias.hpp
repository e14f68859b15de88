#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "panelbc/estimator.hpp"

namespace panelbc {

// How the contemporaneous products g1*g2 and the third derivative enter the
// bias plug-ins. `expected` replaces them by their model expectations given the
// fitted index (the lagged s > t products keep the observed score); `observed`
// uses the raw sample products.
enum class Moments { expected, observed };

struct BiasOptions {
  std::size_t trim = 0;  // M
  Moments moments = Moments::expected;
};

struct BiasEstimates {
  Eigen::VectorXd B;
  Eigen::VectorXd D;
  Eigen::MatrixXd H;
  std::size_t trim = 0;
  Moments moments = Moments::expected;
  bool info_equality_used = false;  // denominators are expected weights, never g1^2
  std::size_t skipped_units = 0;    // units with |D_i| <= M
  std::vector<std::string> warnings;
};

BiasEstimates estimate_bias(const FitResult& fit, const PanelIndex& index,
                            const BiasOptions& opts = {});
Eigen::VectorXd estimate_B(const FitResult& fit, const PanelIndex& index,
                           const BiasOptions& opts = {});
Eigen::VectorXd estimate_D(const FitResult& fit, const PanelIndex& index,
                           const BiasOptions& opts = {});

// Probit with strictly exogenous covariates. Using E[g1 g2] + E[g3]/2 = u w / 2,
//   B = H^{-1} E_N { sum_t w x~ u / (2 sum_t w) },  D likewise over periods,
// with u = x~'b + (alpha_i - kappa_i'b) + (gamma_t - rho_t'b). Only the last
// term survives the unit (period) weighted average, so
//   B = H^{-1} E_N { sum_t w x~ x~' / (2 sum_t w) } b + H^{-1} E_N { sum_t w x~ g*_t / (2 sum_t w) }.
// `proportional_*` return the first part alone, which is what the common
// textbook form shows; it equals the full value when the second part vanishes.
Eigen::VectorXd probit_B(const FitResult& fit, const PanelIndex& index);
Eigen::VectorXd probit_D(const FitResult& fit, const PanelIndex& index);
Eigen::VectorXd probit_proportional_B(const FitResult& fit, const PanelIndex& index);
Eigen::VectorXd probit_proportional_D(const FitResult& fit, const PanelIndex& index);

// ---------------------------------------------------------------------------
// Corrected estimates
// ---------------------------------------------------------------------------

enum class Method { fe, abc, jbc, sbc, hbc, psbc };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

// One subpanel estimate used by a jackknife correction.
struct SubEstimate {
  std::string scheme;  // e.g. "leave_unit_out:12", "period_half:1", "unit_split:3:2"
  Eigen::VectorXd beta;
  std::size_t dropped_units = 0;  // degenerate units removed inside the subpanel
  std::size_t dropped_periods = 0;
};

struct CorrectedEstimate {
  Method method = Method::fe;
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
  // analytical corrections
  Eigen::VectorXd B, D;
  std::size_t trim = 0;
  std::size_t iterations = 0;
  Moments moments = Moments::expected;
  // jackknife corrections
  std::size_t splits = 0;
  std::uint64_t seed = 0;
  std::vector<SubEstimate> subestimates;
  // PSBC: the Newton path left the trust region around the FE estimate
  bool flagged = false;
  std::vector<std::string> warnings;
};

struct AbcOptions {
  BiasOptions bias;
  std::size_t iterations = 1;
};

// Analytical correction beta - B/Tbar - D/Nbar; further iterations evaluate
// B and D at the previous corrected value with the effects re-profiled there.
CorrectedEstimate abc(const PanelData& data, const Family& family, const FitResult& fe,
                      const AbcOptions& opts = {}, const SolveOptions& solve = {});
CorrectedEstimate abc(const PanelData& data, const Family& family, const AbcOptions& opts = {},
                      const SolveOptions& solve = {});

struct PsbcOptions {
  BiasOptions bias;
  std::size_t max_iterations = 50;
  double tol = 1e-10;
  // trust region radius in multiples of max(|ABC - FE|, standard error)
  double trust = 4.0;
};

// Root of  dL/db - b(b)/Tbar - d(b)/Nbar = 0  with b = H B, d = H D
// re-evaluated at every Newton step, started at the FE estimate.
CorrectedEstimate psbc(const PanelData& data, const Family& family, const FitResult& fe,
                       const PsbcOptions& opts = {}, const SolveOptions& solve = {});
CorrectedEstimate psbc(const PanelData& data, const Family& family, const PsbcOptions& opts = {},
                       const SolveOptions& solve = {});

CorrectedEstimate fe_estimate(const FitResult& fe, const PanelIndex& index);

}  // namespace panelbc
