#include "panelbc/two_way.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "panelbc/error.hpp"

namespace panelbc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Residuals of the normal equations for a candidate (a, c).
void normal_residual(const PanelIndex& idx, const VectorXd& w, const VectorXd& r,
                     const VectorXd& s, const VectorXd& a, const VectorXd& c, VectorXd& ra,
                     VectorXd& rc) {
  ra = r;
  rc = s;
  for (std::size_t p = 0; p < idx.n; ++p) {
    const auto i = static_cast<Eigen::Index>(idx.unit[p]);
    const auto t = static_cast<Eigen::Index>(idx.period[p]);
    const double wp = w(static_cast<Eigen::Index>(p));
    const double fit = wp * (a(i) + c(t));
    ra(i) -= fit;
    rc(t) -= fit;
  }
}

double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

TwoWaySolver::TwoWaySolver(const PanelIndex& index, VectorXd weights, TwoWayOptions opts)
    : index_(&index), w_(std::move(weights)), opts_(opts) {
  if (static_cast<std::size_t>(w_.size()) != index.n) {
    throw InputError("two-way solver: weight vector length does not match the panel");
  }
  if (!(w_.array() > 0.0).all() || !w_.allFinite()) {
    throw ValidationError("two-way solver: weights must be finite and positive");
  }
  if (opts_.check_connected) {
    const Components comps = connected_components(index);
    if (comps.count > 1) throw ValidationError(describe_components(comps, IdMap{}));
  }

  unit_total_ = VectorXd::Zero(static_cast<Eigen::Index>(index.units));
  period_total_ = VectorXd::Zero(static_cast<Eigen::Index>(index.periods));
  for (std::size_t p = 0; p < index.n; ++p) {
    unit_total_(static_cast<Eigen::Index>(index.unit[p])) += w_(static_cast<Eigen::Index>(p));
    period_total_(static_cast<Eigen::Index>(index.period[p])) += w_(static_cast<Eigen::Index>(p));
  }

  eliminate_units_ = index.units >= index.periods;
  const std::size_t dense = eliminate_units_ ? index.periods : index.units;
  direct_ = opts_.method == TwoWayOptions::Method::direct && dense <= opts_.max_dense;
  if (!direct_) return;

  const auto& groups = eliminate_units_ ? index.unit_rows : index.period_rows;
  const auto& other = eliminate_units_ ? index.period : index.unit;
  const VectorXd& big_total = eliminate_units_ ? unit_total_ : period_total_;
  const VectorXd& small_total = eliminate_units_ ? period_total_ : unit_total_;

  const auto k = static_cast<Eigen::Index>(dense);
  MatrixXd schur = MatrixXd::Zero(k, k);
  schur.diagonal() = small_total;
  if (4 * index.n >= groups.size() * dense) {
    // dense enough: S -= M'M with M_gj = w_gj / sqrt(A_g), one rank update
    MatrixXd m = MatrixXd::Zero(k, static_cast<Eigen::Index>(groups.size()));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double inv = 1.0 / std::sqrt(big_total(static_cast<Eigen::Index>(g)));
      for (std::size_t p : groups[g]) {
        m(static_cast<Eigen::Index>(other[p]), static_cast<Eigen::Index>(g)) =
            w_(static_cast<Eigen::Index>(p)) * inv;
      }
    }
    schur.selfadjointView<Eigen::Lower>().rankUpdate(m, -1.0);
    schur.triangularView<Eigen::StrictlyUpper>() = schur.transpose();
  } else {
    std::vector<Eigen::Index> col;
    std::vector<double> wv;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& rows = groups[g];
      col.clear();
      wv.clear();
      for (std::size_t p : rows) {
        col.push_back(static_cast<Eigen::Index>(other[p]));
        wv.push_back(w_(static_cast<Eigen::Index>(p)));
      }
      const double inv = 1.0 / big_total(static_cast<Eigen::Index>(g));
      for (std::size_t a = 0; a < col.size(); ++a) {
        const double wa = wv[a] * inv;
        double* dst = schur.data() + col[a] * k;  // column col[a]; S is symmetric
        for (std::size_t b = 0; b < col.size(); ++b) dst[col[b]] -= wa * wv[b];
      }
    }
  }
  // S annihilates the constant vector; the rank-one shift pins sum(c) = 0.
  const double mu = std::max(schur.trace() / static_cast<double>(k), 1e-300);
  schur.array() += mu / static_cast<double>(k);
  factor_.compute(schur);
  if (factor_.info() != Eigen::Success) {
    throw ValidationError("two-way solver: reduced system is not positive definite");
  }
}

void TwoWaySolver::solve_direct(const VectorXd& r, const VectorXd& s, VectorXd& a,
                                VectorXd& c) const {
  const PanelIndex& idx = *index_;
  const auto& groups = eliminate_units_ ? idx.unit_rows : idx.period_rows;
  const auto& other = eliminate_units_ ? idx.period : idx.unit;
  const VectorXd& big_total = eliminate_units_ ? unit_total_ : period_total_;
  const VectorXd& big_rhs = eliminate_units_ ? r : s;
  const VectorXd& small_rhs = eliminate_units_ ? s : r;
  VectorXd& big = eliminate_units_ ? a : c;
  VectorXd& small = eliminate_units_ ? c : a;

  VectorXd b = small_rhs;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    const double scale = big_rhs(gi) / big_total(gi);
    for (std::size_t p : groups[g]) {
      b(static_cast<Eigen::Index>(other[p])) -= w_(static_cast<Eigen::Index>(p)) * scale;
    }
  }
  small = factor_.solve(b);
  big.resize(static_cast<Eigen::Index>(groups.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    double acc = big_rhs(gi);
    for (std::size_t p : groups[g]) {
      acc -= w_(static_cast<Eigen::Index>(p)) * small(static_cast<Eigen::Index>(other[p]));
    }
    big(gi) = acc / big_total(gi);
  }
}

void TwoWaySolver::solve_alternating(const VectorXd& r, const VectorXd& s, VectorXd& a,
                                     VectorXd& c) const {
  const PanelIndex& idx = *index_;
  const double scale = std::max({max_abs(r), max_abs(s), 1e-300});
  VectorXd ra, rc;
  for (std::size_t sweep = 0; sweep < opts_.max_sweeps; ++sweep) {
    for (std::size_t i = 0; i < idx.units; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double acc = r(ii);
      for (std::size_t p : idx.unit_rows[i]) {
        acc -= w_(static_cast<Eigen::Index>(p)) * c(static_cast<Eigen::Index>(idx.period[p]));
      }
      a(ii) = acc / unit_total_(ii);
    }
    for (std::size_t t = 0; t < idx.periods; ++t) {
      const auto tt = static_cast<Eigen::Index>(t);
      double acc = s(tt);
      for (std::size_t p : idx.period_rows[t]) {
        acc -= w_(static_cast<Eigen::Index>(p)) * a(static_cast<Eigen::Index>(idx.unit[p]));
      }
      c(tt) = acc / period_total_(tt);
    }
    // after the period sweep the period equations hold exactly
    if (sweep % 4 == 3 || sweep + 1 == opts_.max_sweeps) {
      normal_residual(idx, w_, r, s, a, c, ra, rc);
      if (max_abs(ra) <= 1e-2 * opts_.tol * scale) return;
    }
  }
  throw ConvergenceError("two-way alternating projection did not converge in " +
                         std::to_string(opts_.max_sweeps) + " sweeps");
}

void TwoWaySolver::solve(const VectorXd& r, const VectorXd& s, VectorXd& a, VectorXd& c) const {
  const PanelIndex& idx = *index_;
  a = VectorXd::Zero(static_cast<Eigen::Index>(idx.units));
  c = VectorXd::Zero(static_cast<Eigen::Index>(idx.periods));
  if (!direct_) {
    solve_alternating(r, s, a, c);
  } else {
    solve_direct(r, s, a, c);
    // a couple of refinement passes recover digits lost in the Schur complement
    const double scale = std::max({max_abs(r), max_abs(s), 1e-300});
    VectorXd ra, rc, da, dc;
    for (int pass = 0; pass < 2; ++pass) {
      normal_residual(idx, w_, r, s, a, c, ra, rc);
      if (std::max(max_abs(ra), max_abs(rc)) <= 1e-13 * scale) break;
      solve_direct(ra, rc, da, dc);
      a += da;
      c += dc;
    }
  }
  const double shift = c.mean();
  c.array() -= shift;
  a.array() += shift;
}

MatrixXd TwoWaySolver::project(const MatrixXd& x, MatrixXd* kappa, MatrixXd* rho) const {
  const PanelIndex& idx = *index_;
  MatrixXd out = x;
  if (kappa) kappa->resize(static_cast<Eigen::Index>(idx.units), x.cols());
  if (rho) rho->resize(static_cast<Eigen::Index>(idx.periods), x.cols());
  VectorXd r(static_cast<Eigen::Index>(idx.units));
  VectorXd s(static_cast<Eigen::Index>(idx.periods));
  VectorXd a, c;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    r.setZero();
    s.setZero();
    for (std::size_t p = 0; p < idx.n; ++p) {
      const double v = w_(static_cast<Eigen::Index>(p)) * x(static_cast<Eigen::Index>(p), k);
      r(static_cast<Eigen::Index>(idx.unit[p])) -= v;
      s(static_cast<Eigen::Index>(idx.period[p])) -= v;
    }
    solve(r, s, a, c);
    for (std::size_t p = 0; p < idx.n; ++p) {
      out(static_cast<Eigen::Index>(p), k) +=
          a(static_cast<Eigen::Index>(idx.unit[p])) + c(static_cast<Eigen::Index>(idx.period[p]));
    }
    if (kappa) kappa->col(k) = a;
    if (rho) rho->col(k) = c;
  }
  return out;
}

MatrixXd two_way_project(const MatrixXd& x, const VectorXd& weights, const PanelIndex& index,
                         const TwoWayOptions& opts) {
  if (static_cast<std::size_t>(x.rows()) != index.n) {
    throw InputError("two_way_project: covariate rows do not match the panel");
  }
  const TwoWaySolver solver(index, weights, opts);
  MatrixXd xt = solver.project(x);
  const double resid = orthogonality_residual(xt, x, weights, index);
  if (resid > opts.tol) {
    throw ConvergenceError("two_way_project: orthogonality residual " + std::to_string(resid) +
                           " above tolerance");
  }
  return xt;
}

double orthogonality_residual(const MatrixXd& xtilde, const MatrixXd& x, const VectorXd& weights,
                              const PanelIndex& index) {
  VectorXd unit_w = VectorXd::Zero(static_cast<Eigen::Index>(index.units));
  VectorXd period_w = VectorXd::Zero(static_cast<Eigen::Index>(index.periods));
  for (std::size_t p = 0; p < index.n; ++p) {
    unit_w(static_cast<Eigen::Index>(index.unit[p])) += weights(static_cast<Eigen::Index>(p));
    period_w(static_cast<Eigen::Index>(index.period[p])) += weights(static_cast<Eigen::Index>(p));
  }
  double worst = 0.0;
  VectorXd ru(static_cast<Eigen::Index>(index.units));
  VectorXd rp(static_cast<Eigen::Index>(index.periods));
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double scale = 1.0 + (x.rows() ? x.col(k).cwiseAbs().maxCoeff() : 0.0);
    ru.setZero();
    rp.setZero();
    for (std::size_t p = 0; p < index.n; ++p) {
      const double v = weights(static_cast<Eigen::Index>(p)) * xtilde(static_cast<Eigen::Index>(p), k);
      ru(static_cast<Eigen::Index>(index.unit[p])) += v;
      rp(static_cast<Eigen::Index>(index.period[p])) += v;
    }
    worst = std::max(worst, (ru.cwiseAbs().array() / unit_w.array()).maxCoeff() / scale);
    worst = std::max(worst, (rp.cwiseAbs().array() / period_w.array()).maxCoeff() / scale);
  }
  return worst;
}

}  // namespace panelbc
