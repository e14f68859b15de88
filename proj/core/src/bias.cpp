#include "panelbc/bias.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "panelbc/error.hpp"

namespace panelbc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::LDLT<MatrixXd> factor_h(const MatrixXd& h) {
  Eigen::LDLT<MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
    throw ValidationError("singular Hessian in bias estimate");
  }
  return ldlt;
}

// g1 g2 x~ + g3 x~ / 2 at one observation.
VectorXd contemporaneous(const FitResult& fit, std::size_t row, Moments moments) {
  const auto p = static_cast<Eigen::Index>(row);
  const double c = moments == Moments::expected
                       ? fit.expected_g1g2(p) + 0.5 * fit.expected_g3(p)
                       : fit.g1(p) * fit.g2(p) + 0.5 * fit.g3(p);
  return c * fit.xtilde.row(p).transpose();
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::fe: return "fe";
    case Method::abc: return "abc";
    case Method::jbc: return "jbc";
    case Method::sbc: return "sbc";
    case Method::hbc: return "hbc";
    case Method::psbc: return "psbc";
  }
  return "fe";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::fe, Method::abc, Method::jbc, Method::sbc, Method::hbc, Method::psbc}) {
    if (method_name(m) == name) return m;
  }
  throw InputError("unknown method '" + std::string(name) +
                   "' (expected fe, abc, jbc, sbc, hbc or psbc)");
}

BiasEstimates estimate_bias(const FitResult& fit, const PanelIndex& index,
                            const BiasOptions& opts) {
  if (fit.xtilde.rows() != static_cast<Eigen::Index>(index.n)) {
    throw InputError("bias estimate needs a full fit (projection missing or wrong panel)");
  }
  const auto d = fit.xtilde.cols();
  const auto ldlt = factor_h(fit.H);
  BiasEstimates out;
  out.H = fit.H;
  out.trim = opts.trim;
  out.moments = opts.moments;

  // B: per unit, sum over t of g1_it x~_is g2_is for s in [t, t+M] reached
  // without crossing a gap, plus g3 x~ / 2; divided by sum_t w_it.
  VectorXd acc = VectorXd::Zero(d);
  std::size_t used = 0;
  for (std::size_t i = 0; i < index.units; ++i) {
    const auto& rows = index.unit_rows[i];
    if (rows.size() <= opts.trim) {
      ++out.skipped_units;
      continue;
    }
    VectorXd num = VectorXd::Zero(d);
    double den = 0.0;
    for (std::size_t a = 0; a < rows.size(); ++a) {
      const std::size_t p = rows[a];
      num += contemporaneous(fit, p, opts.moments);
      den += fit.omega(static_cast<Eigen::Index>(p));
      const double score = fit.g1(static_cast<Eigen::Index>(p));
      for (std::size_t b = a + 1; b < rows.size(); ++b) {
        const std::size_t q = rows[b];
        if (index.period[q] != index.period[rows[b - 1]] + 1) break;
        if (index.period[q] - index.period[p] > opts.trim) break;
        const auto qi = static_cast<Eigen::Index>(q);
        const double g2 = opts.moments == Moments::expected ? -fit.omega(qi) : fit.g2(qi);
        num += score * g2 * fit.xtilde.row(qi).transpose();
      }
    }
    // (-num/|D_i|) / (-den/|D_i|)
    acc += num / den;
    ++used;
  }
  if (used == 0) throw ValidationError("no unit has more than M observations");
  if (out.skipped_units > 0) {
    out.warnings.push_back(std::to_string(out.skipped_units) +
                           " units with at most M observations skipped in B");
  }
  out.B = ldlt.solve(acc / static_cast<double>(used));

  acc.setZero();
  for (std::size_t t = 0; t < index.periods; ++t) {
    VectorXd num = VectorXd::Zero(d);
    double den = 0.0;
    for (std::size_t p : index.period_rows[t]) {
      num += contemporaneous(fit, p, opts.moments);
      den += fit.omega(static_cast<Eigen::Index>(p));
    }
    acc += num / den;
  }
  out.D = ldlt.solve(acc / static_cast<double>(index.periods));
  return out;
}

VectorXd estimate_B(const FitResult& fit, const PanelIndex& index, const BiasOptions& opts) {
  return estimate_bias(fit, index, opts).B;
}

VectorXd estimate_D(const FitResult& fit, const PanelIndex& index, const BiasOptions& opts) {
  return estimate_bias(fit, index, opts).D;
}

// ---------------------------------------------------------------------------
// Probit closed forms
// ---------------------------------------------------------------------------

namespace {

// groups = unit_rows or period_rows. Returns E_g{ sum w x~ z' / (2 sum w) }
// where z is either x~ (proportional part) or the effect part v = u - x~'b.
struct ProbitParts {
  MatrixXd weighted;  // E_g { sum w x~ x~' / (2 sum w) }
  VectorXd effects;   // E_g { sum w x~ v / (2 sum w) }
};

ProbitParts probit_parts(const FitResult& fit, const std::vector<std::vector<std::size_t>>& groups) {
  if (fit.family != "probit") throw InputError("probit closed form needs a probit fit");
  const auto d = fit.xtilde.cols();
  ProbitParts parts{MatrixXd::Zero(d, d), VectorXd::Zero(d)};
  for (const auto& rows : groups) {
    MatrixXd m = MatrixXd::Zero(d, d);
    VectorXd e = VectorXd::Zero(d);
    double den = 0.0;
    for (std::size_t row : rows) {
      const auto p = static_cast<Eigen::Index>(row);
      const VectorXd xt = fit.xtilde.row(p).transpose();
      const double w = fit.omega(p);
      const double v = fit.u(p) - xt.dot(fit.beta);
      m += w * xt * xt.transpose();
      e += w * v * xt;
      den += w;
    }
    parts.weighted += m / (2.0 * den);
    parts.effects += e / (2.0 * den);
  }
  parts.weighted /= static_cast<double>(groups.size());
  parts.effects /= static_cast<double>(groups.size());
  return parts;
}

}  // namespace

VectorXd probit_B(const FitResult& fit, const PanelIndex& index) {
  const ProbitParts parts = probit_parts(fit, index.unit_rows);
  return factor_h(fit.H).solve(parts.weighted * fit.beta + parts.effects);
}

VectorXd probit_D(const FitResult& fit, const PanelIndex& index) {
  const ProbitParts parts = probit_parts(fit, index.period_rows);
  return factor_h(fit.H).solve(parts.weighted * fit.beta + parts.effects);
}

VectorXd probit_proportional_B(const FitResult& fit, const PanelIndex& index) {
  const ProbitParts parts = probit_parts(fit, index.unit_rows);
  return factor_h(fit.H).solve(parts.weighted * fit.beta);
}

VectorXd probit_proportional_D(const FitResult& fit, const PanelIndex& index) {
  const ProbitParts parts = probit_parts(fit, index.period_rows);
  return factor_h(fit.H).solve(parts.weighted * fit.beta);
}

// ---------------------------------------------------------------------------
// Corrections
// ---------------------------------------------------------------------------

CorrectedEstimate fe_estimate(const FitResult& fe, const PanelIndex& index) {
  CorrectedEstimate out;
  out.method = Method::fe;
  out.beta = fe.beta;
  out.vcov = vcov_beta(fe, index);
  return out;
}

CorrectedEstimate abc(const PanelData& data, const Family& family, const FitResult& fe,
                      const AbcOptions& opts, const SolveOptions& solve) {
  if (opts.iterations < 1) throw InputError("abc needs at least one iteration");
  const PanelIndex index = build_index(data);
  CorrectedEstimate out;
  out.method = Method::abc;
  out.trim = opts.bias.trim;
  out.iterations = opts.iterations;
  out.moments = opts.bias.moments;
  out.vcov = vcov_beta(fe, index);

  BiasEstimates be = estimate_bias(fe, index, opts.bias);
  out.beta = fe.beta - be.B / index.tbar - be.D / index.nbar;
  for (std::size_t k = 2; k <= opts.iterations; ++k) {
    const FitResult at = profile_at(data, family, out.beta, solve, {out.beta, fe.alpha, fe.gamma});
    be = estimate_bias(at, index, opts.bias);
    out.beta = fe.beta - be.B / index.tbar - be.D / index.nbar;
  }
  out.B = be.B;
  out.D = be.D;
  out.warnings = be.warnings;
  return out;
}

CorrectedEstimate abc(const PanelData& data, const Family& family, const AbcOptions& opts,
                      const SolveOptions& solve) {
  return abc(data, family, fit(data, family, solve), opts, solve);
}

CorrectedEstimate psbc(const PanelData& data, const Family& family, const FitResult& fe,
                       const PsbcOptions& opts, const SolveOptions& solve) {
  const PanelIndex index = build_index(data);
  const double n = static_cast<double>(index.n);
  CorrectedEstimate out;
  out.method = Method::psbc;
  out.trim = opts.bias.trim;
  out.moments = opts.bias.moments;
  out.vcov = vcov_beta(fe, index);

  FitResult at = fe;
  VectorXd beta = fe.beta;
  double radius = 0.0;
  bool converged = false;
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    const BiasEstimates be = estimate_bias(at, index, opts.bias);
    const VectorXd f = at.score / n - at.H * (be.B / index.tbar + be.D / index.nbar);
    // d f / d beta = -H up to the O(1/T) derivative of the bias terms
    const VectorXd step = factor_h(at.H).solve(f);
    if (it == 0) {
      const double se = out.vcov.diagonal().cwiseSqrt().maxCoeff();
      radius = opts.trust * std::max(step.cwiseAbs().maxCoeff(), se);
    }
    out.B = be.B;
    out.D = be.D;
    out.iterations = it;
    if (step.cwiseAbs().maxCoeff() <= opts.tol * (1.0 + beta.cwiseAbs().maxCoeff())) {
      converged = true;
      break;
    }
    beta += step;
    if ((beta - fe.beta).cwiseAbs().maxCoeff() > radius) out.flagged = true;
    at = profile_at(data, family, beta, solve, {beta, at.alpha, at.gamma});
  }
  if (!converged) {
    throw ConvergenceError("profile-score correction found no root in " +
                           std::to_string(opts.max_iterations) + " iterations");
  }
  if (out.flagged) {
    out.warnings.push_back("profile-score iteration left the trust region around the FE estimate;"
                           " the root may not be unique");
  }
  out.beta = beta;
  return out;
}

CorrectedEstimate psbc(const PanelData& data, const Family& family, const PsbcOptions& opts,
                       const SolveOptions& solve) {
  return psbc(data, family, fit(data, family, solve), opts, solve);
}

}  // namespace panelbc
