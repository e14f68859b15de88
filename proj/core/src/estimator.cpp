#include "panelbc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "panelbc/error.hpp"

namespace panelbc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct State {
  VectorXd beta, alpha, gamma;
};

VectorXd index_of(const PanelData& data, const PanelIndex& idx, const State& s) {
  VectorXd u = data.x() * s.beta;
  for (std::size_t p = 0; p < idx.n; ++p) {
    u(static_cast<Eigen::Index>(p)) += s.alpha(static_cast<Eigen::Index>(idx.unit[p])) +
                                       s.gamma(static_cast<Eigen::Index>(idx.period[p]));
  }
  return u;
}

// Fitted index drifting towards +-infinity: the MLE does not exist.
void check_divergence(const Family& family, const VectorXd& u, double bound) {
  if (family.binary_outcome()) {
    if (u.cwiseAbs().maxCoeff() > bound) {
      throw SeparationError("fitted index exceeds " + std::to_string(bound) +
                            " in absolute value: outcomes are perfectly separated");
    }
  } else if (family.needs_variation() && u.minCoeff() < -bound) {
    throw SeparationError("fitted index below -" + std::to_string(bound) +
                          ": an all-zero unit or period drives its effect to -infinity");
  }
}

struct Gradient {
  VectorXd beta, unit, period;
  double rel = 0.0;
};

Gradient gradient(const PanelData& data, const PanelIndex& idx, const VectorXd& g1) {
  Gradient g;
  g.beta = data.x().transpose() * g1;
  g.unit = VectorXd::Zero(static_cast<Eigen::Index>(idx.units));
  g.period = VectorXd::Zero(static_cast<Eigen::Index>(idx.periods));
  for (std::size_t p = 0; p < idx.n; ++p) {
    g.unit(static_cast<Eigen::Index>(idx.unit[p])) += g1(static_cast<Eigen::Index>(p));
    g.period(static_cast<Eigen::Index>(idx.period[p])) += g1(static_cast<Eigen::Index>(p));
  }
  const double n = static_cast<double>(idx.n);
  for (Eigen::Index k = 0; k < g.beta.size(); ++k) {
    const double rms = std::sqrt(data.x().col(k).squaredNorm() / n);
    g.rel = std::max(g.rel, std::abs(g.beta(k)) / (n * std::max(1.0, rms)));
  }
  for (std::size_t i = 0; i < idx.units; ++i) {
    g.rel = std::max(g.rel, std::abs(g.unit(static_cast<Eigen::Index>(i))) /
                                static_cast<double>(idx.unit_count(i)));
  }
  for (std::size_t t = 0; t < idx.periods; ++t) {
    g.rel = std::max(g.rel, std::abs(g.period(static_cast<Eigen::Index>(t))) /
                                static_cast<double>(idx.period_count(t)));
  }
  return g;
}

State initial_state(const PanelData& data, const Family& family, const FitStart& start,
                    const VectorXd* fixed_beta) {
  const auto d = static_cast<Eigen::Index>(data.num_covariates());
  const auto N = static_cast<Eigen::Index>(data.units());
  const auto T = static_cast<Eigen::Index>(data.periods());
  State s;
  if (fixed_beta) {
    s.beta = *fixed_beta;
  } else if (start.beta.size() == d) {
    s.beta = start.beta;
  } else if (start.beta.size() == 0) {
    s.beta = VectorXd::Zero(d);
  } else {
    throw InputError("starting beta has the wrong length");
  }
  if (s.beta.size() != d) throw InputError("beta has the wrong length");
  if (start.alpha.size() == N && start.gamma.size() == T) {
    s.alpha = start.alpha;
    s.gamma = start.gamma;
  } else if (start.alpha.size() == 0 && start.gamma.size() == 0) {
    const FitStart def = default_start(data, family);
    s.alpha = def.alpha;
    s.gamma = def.gamma;
  } else {
    throw InputError("starting effects have the wrong length");
  }
  return s;
}

void normalize(const PanelIndex& idx, State& s) {
  double shift = 0.0;
  for (std::size_t t = 0; t < idx.periods; ++t) {
    shift += static_cast<double>(idx.period_count(t)) * s.gamma(static_cast<Eigen::Index>(t));
  }
  shift /= static_cast<double>(idx.n);
  s.gamma.array() -= shift;
  s.alpha.array() += shift;
}

// Newton iterations on the (concave) log-likelihood. With fixed_beta the beta
// block is frozen; otherwise each step is the full joint Newton step, whose
// beta part is (sum w x~ x~')^{-1} sum x~ g1 and whose effect part is the
// effect-only step plus (kappa, rho) times the beta step.
State newton(const PanelData& data, const Family& family, const PanelIndex& idx, State s,
             bool fix_beta, const SolveOptions& opts, FitResult& out) {
  const VectorXd& y = data.y();
  const MatrixXd& x = data.x();
  const std::size_t limit = fix_beta ? opts.max_inner : opts.max_outer;
  const auto n = static_cast<Eigen::Index>(idx.n);

  // log-likelihood, scores and Newton weights in one pass
  VectorXd g1(n), w(n);
  auto evaluate = [&](const VectorXd& u, VectorXd& score, VectorXd& weight) {
    double total = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      const IndexDerivs dv = family.derivs(y(p), u(p));
      total += dv.g;
      score(p) = dv.g1;
      weight(p) = std::max(-dv.g2, kWeightFloor);
    }
    return total;
  };

  double L = evaluate(index_of(data, idx, s), g1, w);
  if (!std::isfinite(L)) throw ConvergenceError("log-likelihood not finite at starting values");
  out.loglik_path.assign(1, L);

  VectorXd g1t(n), wt(n);
  bool polish = false;
  for (std::size_t it = 0;; ++it) {
    const Gradient grad = gradient(data, idx, g1);
    out.max_grad = fix_beta ? 0.0 : grad.rel;
    if (fix_beta) {
      for (std::size_t i = 0; i < idx.units; ++i) {
        out.max_grad = std::max(out.max_grad, std::abs(grad.unit(static_cast<Eigen::Index>(i))) /
                                                  static_cast<double>(idx.unit_count(i)));
      }
      for (std::size_t t = 0; t < idx.periods; ++t) {
        out.max_grad = std::max(out.max_grad, std::abs(grad.period(static_cast<Eigen::Index>(t))) /
                                                  static_cast<double>(idx.period_count(t)));
      }
    }
    out.iterations = it;
    if (polish) {
      out.converged = true;
      break;
    }
    // one more step for the last digits unless they are already there
    if (out.max_grad <= 1e-3 * opts.tol_grad) {
      out.converged = true;
      break;
    }
    if (out.max_grad <= opts.tol_grad) polish = true;
    if (it >= limit) break;

    const TwoWaySolver solver(idx, w, opts.two_way);
    VectorXd da, dc;
    solver.solve(grad.unit, grad.period, da, dc);
    VectorXd db = VectorXd::Zero(static_cast<Eigen::Index>(data.num_covariates()));
    if (!fix_beta) {
      MatrixXd kappa, rho;
      const MatrixXd xt = solver.project(x, &kappa, &rho);
      const MatrixXd hn = xt.transpose() * w.asDiagonal() * xt;
      const Eigen::LDLT<MatrixXd> ldlt(hn);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
        throw ValidationError("singular Hessian: a covariate is collinear with the dummies");
      }
      db = ldlt.solve(xt.transpose() * g1);
      da += kappa * db;
      dc += rho * db;
    }

    double lambda = 1.0;
    bool accepted = false;
    State trial;
    VectorXd ut;
    double Lt = L;
    for (int h = 0; h < 60; ++h, lambda *= 0.5) {
      trial.beta = s.beta + lambda * db;
      trial.alpha = s.alpha + lambda * da;
      trial.gamma = s.gamma + lambda * dc;
      ut = index_of(data, idx, trial);
      Lt = evaluate(ut, g1t, wt);
      if (std::isfinite(Lt) && Lt >= L - 1e-12 * (1.0 + std::abs(L))) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (polish) {
        out.converged = true;
        break;
      }
      throw ConvergenceError("line search failed at iteration " + std::to_string(it) +
                             " (relative gradient " + std::to_string(out.max_grad) + ")");
    }
    check_divergence(family, ut, opts.separation_bound);
    s = std::move(trial);
    g1.swap(g1t);
    w.swap(wt);
    L = Lt;
    out.loglik_path.push_back(L);
  }
  if (!out.converged) {
    throw ConvergenceError("fixed effects estimator did not converge in " +
                           std::to_string(limit) + " iterations (relative gradient " +
                           std::to_string(out.max_grad) + ")");
  }
  return s;
}

void finalize(const PanelData& data, const Family& family, const PanelIndex& idx, State s,
              const SolveOptions& opts, FitResult& out) {
  normalize(idx, s);
  const auto n = static_cast<Eigen::Index>(idx.n);
  const VectorXd& y = data.y();
  out.family = std::string(family.name());
  out.u = index_of(data, idx, s);
  out.beta = std::move(s.beta);
  out.alpha = std::move(s.alpha);
  out.gamma = std::move(s.gamma);

  if (opts.parameters_only) {
    // subfits: parameters, index and log-likelihood only
    double loglik = out.loglik_path.back();
    if (family.has_dispersion()) {
      double ssr = 0.0;
      for (Eigen::Index p = 0; p < n; ++p) {
        const double g1 = family.derivs(y(p), out.u(p)).g1;
        ssr += g1 * g1;
      }
      out.dispersion = std::max(ssr / static_cast<double>(n), 1e-300);
      loglik = -0.5 * static_cast<double>(n) *
               (std::log(2.0 * std::numbers::pi * out.dispersion) + 1.0);
    }
    out.loglik = loglik;
    return;
  }

  out.g1.resize(n);
  out.g2.resize(n);
  out.g3.resize(n);
  out.expected_g1g2.resize(n);
  out.expected_g3.resize(n);
  out.omega.resize(n);
  double loglik = 0.0;
  for (Eigen::Index p = 0; p < n; ++p) {
    const IndexDerivs dv = family.derivs(y(p), out.u(p));
    const ExpectedMoments em = family.expected_moments(out.u(p));
    out.g1(p) = dv.g1;
    out.g2(p) = dv.g2;
    out.g3(p) = dv.g3;
    out.expected_g1g2(p) = em.score_hessian;
    out.expected_g3(p) = em.third;
    out.omega(p) = expected_weight(family, out.u(p));
    loglik += dv.g;
  }
  if (family.has_dispersion()) {
    // Index fitted at unit scale; sigma^2 concentrated out afterwards.
    const double sigma2 = std::max(out.g1.squaredNorm() / static_cast<double>(n), 1e-300);
    out.dispersion = sigma2;
    out.g1 /= sigma2;
    out.g2 /= sigma2;
    out.g3 /= sigma2;
    out.expected_g1g2.setZero();
    out.expected_g3.setZero();
    out.omega.setConstant(1.0 / sigma2);
    loglik = -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * sigma2) + 1.0);
  }
  out.loglik = loglik;

  const TwoWaySolver solver(idx, out.omega, opts.two_way);
  out.xtilde = solver.project(data.x());
  const double resid = orthogonality_residual(out.xtilde, data.x(), out.omega, idx);
  if (resid > opts.tol_proj) {
    throw ConvergenceError("projection orthogonality residual " + std::to_string(resid) +
                           " above tolerance");
  }
  {
    const MatrixXd wx = out.omega.asDiagonal() * out.xtilde;
    MatrixXd h = out.xtilde.transpose() * wx / static_cast<double>(n);
    out.H = 0.5 * (h + h.transpose());
  }
  out.score = out.xtilde.transpose() * out.g1;

  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(out.H, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300))) {
    throw ValidationError("singular Hessian: a covariate is collinear with the dummies");
  }
}

void check_connected(const PanelData& data, const PanelIndex& idx, SolveOptions& opts) {
  if (!opts.two_way.check_connected) return;
  const Components comps = connected_components(idx);
  if (comps.count > 1) throw ValidationError(describe_components(comps, data.ids()));
  opts.two_way.check_connected = false;
}

}  // namespace

FitStart default_start(const PanelData& data, const Family& family) {
  const PanelIndex idx = build_index(data);
  const VectorXd& y = data.y();
  FitStart s;
  s.beta = VectorXd::Zero(static_cast<Eigen::Index>(data.num_covariates()));
  s.alpha.resize(static_cast<Eigen::Index>(idx.units));
  s.gamma.resize(static_cast<Eigen::Index>(idx.periods));
  const double overall = family.start_index(y.mean());
  for (std::size_t i = 0; i < idx.units; ++i) {
    double m = 0.0;
    for (std::size_t p : idx.unit_rows[i]) m += y(static_cast<Eigen::Index>(p));
    s.alpha(static_cast<Eigen::Index>(i)) =
        family.start_index(m / static_cast<double>(idx.unit_count(i)));
  }
  for (std::size_t t = 0; t < idx.periods; ++t) {
    double m = 0.0;
    for (std::size_t p : idx.period_rows[t]) m += y(static_cast<Eigen::Index>(p));
    s.gamma(static_cast<Eigen::Index>(t)) =
        family.start_index(m / static_cast<double>(idx.period_count(t))) - overall;
  }
  return s;
}

FitStart restrict_start(const FitResult& parent, const Subpanel& sub) {
  FitStart s;
  s.beta = parent.beta;
  s.alpha.resize(static_cast<Eigen::Index>(sub.parent_unit.size()));
  s.gamma.resize(static_cast<Eigen::Index>(sub.parent_period.size()));
  for (std::size_t i = 0; i < sub.parent_unit.size(); ++i) {
    s.alpha(static_cast<Eigen::Index>(i)) = parent.alpha(static_cast<Eigen::Index>(sub.parent_unit[i]));
  }
  for (std::size_t t = 0; t < sub.parent_period.size(); ++t) {
    s.gamma(static_cast<Eigen::Index>(t)) =
        parent.gamma(static_cast<Eigen::Index>(sub.parent_period[t]));
  }
  return s;
}

FitResult fit(const PanelData& data, const Family& family, const SolveOptions& opts,
              const FitStart& start) {
  const PanelIndex idx = build_index(data);
  SolveOptions o = opts;
  check_connected(data, idx, o);
  FitResult out;
  State s = newton(data, family, idx, initial_state(data, family, start, nullptr), false, o, out);
  finalize(data, family, idx, std::move(s), o, out);
  return out;
}

FitResult profile_at(const PanelData& data, const Family& family, const VectorXd& beta,
                     const SolveOptions& opts, const FitStart& start) {
  const PanelIndex idx = build_index(data);
  SolveOptions o = opts;
  check_connected(data, idx, o);
  FitResult out;
  State s = newton(data, family, idx, initial_state(data, family, start, &beta), true, o, out);
  finalize(data, family, idx, std::move(s), o, out);
  return out;
}

MatrixXd vcov_beta(const FitResult& fit, const PanelIndex& index) {
  const Eigen::LDLT<MatrixXd> ldlt(fit.H);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
    throw ValidationError("singular Hessian");
  }
  const auto d = fit.H.rows();
  MatrixXd v = ldlt.solve(MatrixXd::Identity(d, d)) / static_cast<double>(index.n);
  return 0.5 * (v + v.transpose());
}

}  // namespace panelbc
