#include "panelbc/effects.hpp"

#include <cmath>
#include <string>

#include "panelbc/error.hpp"

namespace panelbc {

namespace {

using Eigen::VectorXd;

double cluster_term(const PanelIndex& idx, const VectorXd& effects, double mean, bool units) {
  const auto& groups = units ? idx.unit_rows : idx.period_rows;
  const double G = static_cast<double>(groups.size());
  if (groups.size() < 2) return 0.0;
  double ss = 0.0;
  for (const auto& rows : groups) {
    double m = 0.0;
    for (auto r : rows) m += effects(static_cast<Eigen::Index>(r));
    m /= static_cast<double>(rows.size());
    ss += (m - mean) * (m - mean);
  }
  return ss / (G * G) * G / (G - 1.0);
}

}  // namespace

std::string_view target_name(Target t) {
  switch (t) {
    case Target::nt: return "nt";
    case Target::pop: return "pop";
    case Target::t: return "t";
  }
  return "nt";
}

Target parse_target(std::string_view name) {
  for (Target t : {Target::nt, Target::pop, Target::t}) {
    if (target_name(t) == name) return t;
  }
  throw InputError("unknown APE target '" + std::string(name) + "' (expected nt, pop or t)");
}

void check_effect_spec(const PanelData& data, const EffectSpec& spec) {
  if (spec.covariate >= data.num_covariates()) throw InputError("effect covariate out of range");
  const CovariateKind kind = data.covariate_kinds()[spec.covariate];
  const std::string& name = data.covariate_names()[spec.covariate];
  if (spec.mode == EffectSpec::Mode::discrete && kind != CovariateKind::binary) {
    throw InputError("discrete effect requested for continuous covariate '" + name + "'");
  }
  if (spec.mode == EffectSpec::Mode::marginal && kind != CovariateKind::continuous) {
    throw InputError("marginal effect requested for binary covariate '" + name + "'");
  }
}

VectorXd effect_matrix(const PanelData& data, const Family& family, const FitResult& fit,
                       const EffectSpec& spec) {
  check_effect_spec(data, spec);
  const auto n = static_cast<Eigen::Index>(data.size());
  VectorXd out(n);
  for (Eigen::Index p = 0; p < n; ++p) {
    const double phi = fit.u(p) - data.x().row(p).dot(fit.beta);
    out(p) = partial_effect(family, data.x().row(p).transpose(), fit.beta, phi, spec);
  }
  return out;
}

APEResult ape(const PanelData& data, const Family& family, const FitResult& fit,
              const EffectSpec& spec, Target target) {
  check_effect_spec(data, spec);
  if (fit.xtilde.rows() != static_cast<Eigen::Index>(data.size())) {
    throw InputError("ape needs a full fit (projection missing)");
  }
  const PanelIndex idx = build_index(data);
  const auto n = static_cast<Eigen::Index>(idx.n);
  if (n == 0) throw ValidationError("empty effect set");
  APEResult out;
  out.target = target;
  out.method = Method::fe;
  out.effects.resize(n);

  // delta method through beta; the effects move with beta through the
  // profiled alpha_i + gamma_t, whose derivative is x~ - x
  VectorXd jac = VectorXd::Zero(static_cast<Eigen::Index>(data.num_covariates()));
  for (Eigen::Index p = 0; p < n; ++p) {
    const double phi = fit.u(p) - data.x().row(p).dot(fit.beta);
    const EffectGradient g =
        partial_effect_gradient(family, data.x().row(p).transpose(), fit.beta, phi, spec);
    out.effects(p) = g.value;
    jac += g.d_beta + g.d_phi * (fit.xtilde.row(p) - data.x().row(p)).transpose();
  }
  jac /= static_cast<double>(n);
  out.estimate = out.effects.mean();
  out.var_estimation = jac.dot(vcov_beta(fit, idx) * jac);
  if (target == Target::pop || target == Target::t) {
    out.var_units = cluster_term(idx, out.effects, out.estimate, true);
  }
  if (target == Target::pop) {
    out.var_periods = cluster_term(idx, out.effects, out.estimate, false);
  }
  out.se = std::sqrt(std::max(0.0, out.var_estimation + out.var_units + out.var_periods));
  return out;
}

APEResult corrected_ape(const PanelData& data, const Family& family, const FitResult& fit,
                        const EffectSpec& spec, Target target, Method method,
                        const JackknifeOptions& opts) {
  APEResult base = ape(data, family, fit, spec, target);
  if (method == Method::fe) return base;
  if (method != Method::jbc && method != Method::sbc && method != Method::hbc) {
    throw InputError("APE corrections are jbc, sbc or hbc");
  }
  JackknifeRequest req;
  req.jbc = method == Method::jbc;
  req.sbc = method == Method::sbc;
  req.hbc = method == Method::hbc;
  JackknifeOptions o = opts;
  o.solve.parameters_only = true;
  const Statistic stat = [&](const PanelData& d, const FitResult& f) {
    VectorXd v(1);
    v(0) = effect_matrix(d, family, f, spec).mean();
    return v;
  };
  JackknifeResult r = jackknife(data, family, fit, stat, req, o);
  const VectorXd& v = method == Method::jbc ? r.jbc : method == Method::sbc ? r.sbc : r.hbc;
  base.estimate = v(0);
  base.method = method;
  base.effects.resize(0);
  base.subestimates = std::move(r.subestimates);
  return base;
}

}  // namespace panelbc
