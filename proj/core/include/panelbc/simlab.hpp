#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "panelbc/bias.hpp"
#include "panelbc/effects.hpp"
#include "panelbc/rng.hpp"

namespace panelbc {

// One covariate process. With s_it a stationary unit-variance AR(1) with
// coefficient `rho` (rho = 0: i.i.d. over t),
//   continuous: x_it = shift + load * alpha_i + scale * s_it
//   binary:     x_it = 1{shift + load * alpha_i + s_it > 0}
struct CovariateProcess {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  double rho = 0.0;
  double load = 0.0;
  double scale = 1.0;
  double shift = 0.0;
};

struct McDesign {
  std::string name = "design";
  std::string family = "logit";
  double sigma2 = 1.0;  // linear noise variance
  std::size_t N = 100;
  std::size_t T = 10;
  Eigen::VectorXd beta0;

  // static: exogenous covariates from `covariates`.
  // ar1_outcome: linear y_it = beta0[0] y_i,t-1 + alpha_i + gamma_t + e_it,
  // started from the stationary law; the lag is the only covariate.
  enum class Process { static_covariates, ar1_outcome } process = Process::static_covariates;
  std::vector<CovariateProcess> covariates;

  // alpha_i ~ alpha_mean + alpha_sd N(0,1), gamma_t likewise; fixed vectors
  // override the draws when non-empty.
  double alpha_mean = 0.0, alpha_sd = 1.0;
  double gamma_mean = 0.0, gamma_sd = 1.0;
  Eigen::VectorXd alpha_fixed, gamma_fixed;

  std::size_t reps = 100;
  std::uint64_t seed = 1;

  // Estimator tokens: fe, abc, jbc, sbc, hbc, psbc; abc and psbc take
  // suffixes _m<M> (trim) and _k<k> (abc iterations), e.g. abc_m2_k3.
  std::vector<std::string> estimators = {"fe", "abc"};
  std::size_t trim = 0;
  std::size_t splits = 50;
  Moments moments = Moments::expected;
  double level = 0.95;
  // Average partial effect of this covariate (in-sample target), reported
  // for fe and the jackknife estimators.
  std::optional<std::string> ape_covariate;
  // Units/periods without outcome variation are dropped before fitting.
  bool drop_degenerate = true;

  SolveOptions solve;
};

// Throws InputError when the design is inconsistent.
void check_design(const McDesign& design);

struct SimPanel {
  PanelData data;
  Eigen::VectorXd alpha;  // true effects of the units/periods kept in `data`
  Eigen::VectorXd gamma;
  std::size_t dropped_units = 0;
  std::size_t dropped_periods = 0;
};

// One draw of the design (effects, covariates, outcomes), cleaned of
// degenerate units/periods when the design asks for it.
SimPanel simulate_panel(const McDesign& design, Rng& rng);

struct EstimatorSpec {
  std::string label;
  Method method = Method::fe;
  std::size_t trim = 0;
  std::size_t iterations = 1;
};
EstimatorSpec parse_estimator(const std::string& token, std::size_t default_trim);

// Statistics of one estimator for one coefficient over the successful
// replications. SD uses 1/R; percentages are relative to the (mean) truth.
struct CoefficientStats {
  std::string estimator;
  std::string coefficient;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double bias_pct = 0.0;
  double sd_pct = 0.0;
  double rmse_pct = 0.0;
  double coverage = 0.0;
  double mc_se = 0.0;  // sd / sqrt(R)
  std::size_t count = 0;
};

struct Replication {
  bool ok = false;
  std::string error;
  // per estimator: estimates, standard errors and truths (beta, then APE)
  std::vector<Eigen::VectorXd> estimate;
  std::vector<Eigen::VectorXd> se;
  Eigen::VectorXd truth;
  std::size_t dropped_units = 0;
  std::size_t dropped_periods = 0;
};

struct SimReport {
  McDesign design;
  std::vector<std::string> estimators;
  std::vector<std::string> coefficients;
  std::vector<CoefficientStats> rows;  // estimator-major
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;  // first few
  std::vector<Replication> replications;

  const CoefficientStats& at(const std::string& estimator, const std::string& coefficient) const;
};

// Runs the replications on up to `workers` threads. Replication r uses the
// substream (seed, r); the report does not depend on `workers`. Throws
// ConvergenceError when more than 20% of the replications fail.
SimReport run_mc(const McDesign& design, std::size_t workers = 1);

// One replication (exposed for tests).
Replication run_replication(const McDesign& design, const std::vector<EstimatorSpec>& estimators,
                            std::size_t rep);

SimReport aggregate(const McDesign& design, const std::vector<EstimatorSpec>& estimators,
                    std::vector<Replication> reps);

// Synthetic logit design shaped like a labor-force-participation panel: two
// persistent binary covariates and one continuous AR(1), all correlated with
// alpha_i; alpha_i and gamma_t standard normal. d_beta selects the first
// d_beta of (b1, b2, c1), repeating the cycle beyond three.
McDesign calibrated_logit_design(std::size_t N, std::size_t T, std::size_t d_beta,
                                 std::uint64_t seed);

// Phi(z - shift) - Phi(-z - shift) with z the (1 + level)/2 normal quantile.
double coverage_theory(double shift, double level = 0.95);

// ---------------------------------------------------------------------------
// Variance of a normal sample
// ---------------------------------------------------------------------------

enum class VarianceEstimator { mle, abc, abck, jbc, sbc };

struct Moments2 {
  double bias = 0.0;
  double variance = 0.0;
  double bias_se = 0.0;      // Monte Carlo standard errors (zero for the oracle)
  double variance_se = 0.0;
};

// Exact bias and variance. `k` is the number of ABC iterations for abck.
Moments2 normal_variance_oracle(std::size_t n, double sigma2, VarianceEstimator est,
                                std::size_t k = 2);

// All five estimators computed from the same draws by their recipes:
// plug-in bias for ABC/ABCk, leave-one-out refits for JBC, half-sample refits
// for SBC. Index by VarianceEstimator.
struct NormalVarianceMc {
  std::size_t reps = 0;
  Moments2 moments[5];
  // signed differences of the means of consecutive estimators in the order
  // mle, abc, abck, jbc, sbc, with standard errors (common random numbers)
  double bias_step[4] = {};
  double bias_step_se[4] = {};
  // max |JBC - n sigma^2-hat / (n-1)| over draws
  double jbc_closed_form_gap = 0.0;
};
NormalVarianceMc normal_variance_mc_all(std::size_t n, double sigma2, std::size_t reps,
                                        std::uint64_t seed, std::size_t k = 2);
Moments2 normal_variance_mc(std::size_t n, double sigma2, VarianceEstimator est, std::size_t reps,
                            std::uint64_t seed, std::size_t k = 2);

}  // namespace panelbc
