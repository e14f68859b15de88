#pragma once

#include <Eigen/Dense>

#include <string_view>

#include "panelbc/bias.hpp"
#include "panelbc/jackknife.hpp"

namespace panelbc {

// nt: the in-sample average; pop: the population average over units and
// periods; t: the population of units over the sample periods.
enum class Target { nt, pop, t };
std::string_view target_name(Target t);
Target parse_target(std::string_view name);

struct APEResult {
  double estimate = 0.0;
  double se = 0.0;
  Target target = Target::nt;
  Method method = Method::fe;
  // variance pieces: estimation noise through beta-hat, unit and period
  // cluster terms (zero when not part of the target)
  double var_estimation = 0.0;
  double var_units = 0.0;
  double var_periods = 0.0;
  Eigen::VectorXd effects;  // delta_it over D (FE method only)
  std::vector<SubEstimate> subestimates;
};

// Checks that the mode matches the covariate kind: discrete for binary
// covariates, marginal for continuous ones.
void check_effect_spec(const PanelData& data, const EffectSpec& spec);

// delta_it at the fitted (alpha_i + gamma_t, beta) for every row of D.
Eigen::VectorXd effect_matrix(const PanelData& data, const Family& family, const FitResult& fit,
                              const EffectSpec& spec);

// Plug-in APE and its standard error for the chosen target. `fit` must be a
// full fit (x~ and H available).
APEResult ape(const PanelData& data, const Family& family, const FitResult& fit,
              const EffectSpec& spec, Target target);

// Jackknife-corrected APE; the standard error is that of the FE plug-in for
// the same target.
APEResult corrected_ape(const PanelData& data, const Family& family, const FitResult& fit,
                        const EffectSpec& spec, Target target, Method method,
                        const JackknifeOptions& opts = {});

}  // namespace panelbc
