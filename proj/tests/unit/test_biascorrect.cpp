#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "panelbc/bias.hpp"
#include "panelbc/error.hpp"
#include "panelbc/jackknife.hpp"
#include "panelbc/simlab.hpp"

using namespace panelbc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PanelData draw(std::uint64_t seed, std::size_t N, std::size_t T, std::size_t d, const std::string& fam,
               double missing = 0.0) {
  Rng rng(seed);
  PanelData out = oracle::make_panel({0, 1}, {0, 0}, {0, 0}, {{0.0}, {1.0}});
  REQUIRE(oracle::random_panel(rng, N, T, d, fam, missing, out));
  return out;
}

double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// Trimmed plug-in written out for a balanced panel with t, s running over
// 1..T directly (no gap logic, no T-bar).
VectorXd balanced_B(const FitResult& f, const PanelData& d, std::size_t M) {
  const std::size_t N = d.units(), T = d.periods();
  const auto k = f.xtilde.cols();
  VectorXd acc = VectorXd::Zero(k);
  for (std::size_t i = 0; i < N; ++i) {
    VectorXd num = VectorXd::Zero(k);
    double den = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto p = static_cast<Eigen::Index>(i * T + t);
      num += (f.expected_g1g2(p) + f.expected_g3(p) / 2) * f.xtilde.row(p).transpose();
      den += f.omega(p);
      for (std::size_t s = t + 1; s <= std::min(t + M, T - 1); ++s) {
        const auto q = static_cast<Eigen::Index>(i * T + s);
        num -= f.g1(p) * f.omega(q) * f.xtilde.row(q).transpose();
      }
    }
    acc += num / den;
  }
  return f.H.ldlt().solve(acc / double(N));
}

VectorXd balanced_D(const FitResult& f, const PanelData& d) {
  const std::size_t N = d.units(), T = d.periods();
  const auto k = f.xtilde.cols();
  VectorXd acc = VectorXd::Zero(k);
  for (std::size_t t = 0; t < T; ++t) {
    VectorXd num = VectorXd::Zero(k);
    double den = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const auto p = static_cast<Eigen::Index>(i * T + t);
      num += (f.expected_g1g2(p) + f.expected_g3(p) / 2) * f.xtilde.row(p).transpose();
      den += f.omega(p);
    }
    acc += num / den;
  }
  return f.H.ldlt().solve(acc / double(T));
}

}  // namespace

TEST_CASE("linear family, M = 0: no bias terms and every analytical correction is FE") {
  for (double missing : {0.0, 0.3}) {
    const PanelData d = draw(3, 30, 7, 2, "linear", missing);
    const auto lin = make_family("linear");
    const FitResult fe = fit(d, *lin);
    const PanelIndex idx = build_index(d);
    const BiasEstimates b = estimate_bias(fe, idx);
    CHECK(b.B.isZero(0.0));
    CHECK(b.D.isZero(0.0));
    if (missing == 0.0) {
      // balanced: observed products sum to x~'e = 0
      CHECK(max_abs(estimate_bias(fe, idx, {0, Moments::observed}).B) <= 1e-10);
      CHECK(max_abs(estimate_D(fe, idx, {0, Moments::observed})) <= 1e-10);
    }
    CHECK(abc(d, *lin, fe).beta == fe.beta);
    CHECK(abc(d, *lin, fe, {{}, 3}).beta == fe.beta);
    CHECK(psbc(d, *lin, fe).beta == fe.beta);
  }
}

TEST_CASE("probit: B and D vanish at beta = 0 with zero effects") {
  // y = (i + t) mod 2: every unit and period mean is 1/2, so alpha = gamma = 0
  std::vector<std::size_t> u, t;
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  Rng rng(4);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t s = 0; s < 6; ++s) {
      u.push_back(i);
      t.push_back(s);
      y.push_back(double((i + s) % 2));
      x.push_back({rng.normal(), rng.normal()});
    }
  }
  const PanelData d = oracle::make_panel(u, t, y, x);
  const auto probit = make_family("probit");
  const FitResult at = profile_at(d, *probit, VectorXd::Zero(2));
  CHECK(max_abs(at.u) <= 1e-12);
  const BiasEstimates b = estimate_bias(at, build_index(d));
  CHECK(max_abs(b.B) <= 1e-12);
  CHECK(max_abs(b.D) <= 1e-12);
  CHECK(max_abs(probit_B(at, build_index(d))) <= 1e-12);
}

TEST_CASE("probit: generic plug-in equals the closed form") {
  for (double missing : {0.0, 0.2}) {
    const PanelData d = draw(17, 60, 8, 2, "probit", missing);
    const auto probit = make_family("probit");
    const FitResult f = fit(d, *probit);
    const PanelIndex idx = build_index(d);
    const BiasEstimates b = estimate_bias(f, idx);
    // test-side: B = H^-1 E_N { sum_t w x~ u / (2 sum_t w) }
    VectorXd acc = VectorXd::Zero(2);
    for (const auto& rows : idx.unit_rows) {
      VectorXd num = VectorXd::Zero(2);
      double den = 0.0;
      for (auto r : rows) {
        const auto p = static_cast<Eigen::Index>(r);
        num += f.omega(p) * f.u(p) * f.xtilde.row(p).transpose();
        den += f.omega(p);
      }
      acc += num / (2 * den);
    }
    const VectorXd closed = f.H.ldlt().solve(acc / double(idx.units));
    CHECK(max_abs(b.B - closed) <= 1e-8 * max_abs(closed));
    CHECK(max_abs(b.B - probit_B(f, idx)) <= 1e-8 * max_abs(closed));
    CHECK(max_abs(b.D - probit_D(f, idx)) <= 1e-8 * max_abs(b.D));
  }
}

TEST_CASE("balanced panels: unbalanced formulas reduce to the balanced ones") {
  for (const char* name : {"logit", "probit", "poisson"}) {
    const PanelData d = draw(9, 25, 7, 2, name);
    const FitResult f = fit(d, *make_family(name));
    const PanelIndex idx = build_index(d);
    CHECK(idx.tbar == 7.0);
    CHECK(idx.nbar == 25.0);
    for (std::size_t M : {0u, 1u, 3u}) {
      const BiasEstimates b = estimate_bias(f, idx, {M, Moments::expected});
      CHECK(max_abs(b.B - balanced_B(f, d, M)) <= 1e-13 * std::max(1.0, max_abs(b.B)));
      CHECK(max_abs(b.D - balanced_D(f, d)) <= 1e-13 * std::max(1.0, max_abs(b.D)));
    }
  }
}

TEST_CASE("trimmed sums stop at gaps and short units are skipped") {
  // unit 1 has D = {1,2,4,5}: the pair (2,4) must not be used
  PanelData full = draw(21, 12, 5, 1, "linear");
  std::vector<std::size_t> u, t;
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  for (std::size_t r = 0; r < full.size(); ++r) {
    if (full.unit()[r] == 0 && full.period()[r] == 2) continue;
    u.push_back(full.unit()[r]);
    t.push_back(full.period()[r]);
    y.push_back(full.y()(static_cast<Eigen::Index>(r)));
    x.push_back({full.x()(static_cast<Eigen::Index>(r), 0)});
  }
  const PanelData d = oracle::make_panel(u, t, y, x);
  const FitResult f = fit(d, *make_family("linear"));
  const PanelIndex idx = build_index(d);
  for (std::size_t M : {1u, 2u, 4u}) {
    VectorXd acc = VectorXd::Zero(1);
    std::size_t used = 0;
    for (std::size_t i = 0; i < idx.units; ++i) {
      const auto& rows = idx.unit_rows[i];
      if (rows.size() <= M) continue;
      double num = 0.0, den = 0.0;
      for (auto p : rows) {
        den += f.omega(static_cast<Eigen::Index>(p));
        for (auto q : rows) {
          const std::size_t tp = d.period()[p], tq = d.period()[q];
          if (tq <= tp || tq - tp > M) continue;
          bool broken = false;
          for (std::size_t s = tp + 1; s < tq; ++s) {
            broken |= std::none_of(rows.begin(), rows.end(), [&](std::size_t r) { return d.period()[r] == s; });
          }
          if (broken) continue;
          num -= f.g1(static_cast<Eigen::Index>(p)) * f.omega(static_cast<Eigen::Index>(q)) *
                 f.xtilde(static_cast<Eigen::Index>(q), 0);
        }
      }
      acc(0) += num / den;
      ++used;
    }
    const BiasEstimates b = estimate_bias(f, idx, {M, Moments::expected});
    const double expect = acc(0) / double(used) / f.H(0, 0);
    CHECK(b.B(0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(b.skipped_units == (M >= 4 ? 1u : 0u));
    CHECK(b.warnings.size() == (M >= 4 ? 1u : 0u));
  }
}

TEST_CASE("jackknife affine identities") {
  VectorXd c(3);
  c << 0.1, -7.3, 1e-3;
  CHECK(jbc_combine(c, c, c, 37, 9) == c);
  CHECK(sbc_combine(c, c, c) == c);
  CHECK(hbc_combine(c, c, c, 664) == c);

  // through the whole machinery with a constant statistic
  const PanelData d = draw(2, 9, 7, 1, "linear");
  const auto lin = make_family("linear");
  const FitResult f = fit(d, *lin);
  const Statistic constant = [&](const PanelData&, const FitResult&) { return c; };
  JackknifeOptions o;
  o.splits = 7;
  const JackknifeResult r = jackknife(d, *lin, f, constant, {true, true, true}, o);
  CHECK(r.jbc == c);
  CHECK(r.sbc == c);
  CHECK(r.hbc == c);
  CHECK(r.subestimates.size() == 9 + 7 + 2 + 2 * 7);
}

TEST_CASE("jackknife combinations match a direct recomputation") {
  const PanelData d = draw(31, 10, 6, 2, "poisson");
  const auto pois = make_family("poisson");
  const FitResult f = fit(d, *pois);
  JackknifeOptions o;
  o.splits = 3;
  o.seed = 99;
  o.on_degenerate = JackknifeOptions::OnDegenerate::drop;
  const CorrectedEstimate j = jbc(d, *pois, f, o);
  const CorrectedEstimate s = sbc(d, *pois, f, o);
  const CorrectedEstimate h = hbc(d, *pois, f, o);
  REQUIRE(j.subestimates.size() == 16);
  REQUIRE(s.subestimates.size() == 2 + 6);
  REQUIRE(h.subestimates.size() == 12);
  CHECK(s.seed == 99);
  CHECK(s.splits == 3);

  // leave-one-out estimates refitted here from scratch
  VectorXd unit_mean = VectorXd::Zero(2), period_mean = VectorXd::Zero(2);
  for (std::size_t i = 0; i < 10; ++i) {
    unit_mean += fit(subpanel(d, SplitScheme::leave_unit_out(i)).data, *pois).beta / 10.0;
  }
  for (std::size_t t = 0; t < 6; ++t) {
    period_mean += fit(subpanel(d, SplitScheme::leave_period_out(t)).data, *pois).beta / 6.0;
  }
  const VectorXd expect_j = 15.0 * f.beta - 9.0 * unit_mean - 5.0 * period_mean;
  CHECK(max_abs(j.beta - expect_j) <= 1e-7);
  const VectorXd halves = 0.5 * (fit(subpanel(d, SplitScheme::first_half()).data, *pois).beta +
                                 fit(subpanel(d, SplitScheme::second_half()).data, *pois).beta);
  CHECK(max_abs(h.beta - (11.0 * f.beta - 9.0 * unit_mean - halves)) <= 1e-7);

  // determinism and the seed
  CHECK(sbc(d, *pois, f, o).beta == s.beta);
  JackknifeOptions other = o;
  other.seed = 100;
  CHECK(sbc(d, *pois, f, other).beta != s.beta);
  other = o;
  other.workers = 4;
  CHECK(sbc(d, *pois, f, other).beta == s.beta);
}

TEST_CASE("unit halves") {
  Rng rng(1);
  for (std::size_t N : {4u, 5u, 11u}) {
    auto [a, b] = unit_halves(N, rng);
    CHECK(a.size() == (N + 1) / 2);
    CHECK(b.size() == N / 2);
    std::vector<int> seen(N, 0);
    for (auto i : a) ++seen[i];
    for (auto i : b) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  }
}

TEST_CASE("jackknife subpanel failures name the subpanel") {
  // unit 1 varies only in period 3; leaving period 3 out makes it constant
  std::vector<std::size_t> u, t;
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  Rng rng(6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t s = 0; s < 5; ++s) {
      u.push_back(i);
      t.push_back(s);
      y.push_back(i == 0 ? double(s == 2) : double((i + s) % 2));
      x.push_back({rng.normal()});
    }
  }
  const PanelData d = oracle::make_panel(u, t, y, x);
  const auto logit = make_family("logit");
  const FitResult f = fit(d, *logit);
  try {
    jbc(d, *logit, f);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("leave_period_out:3") != std::string::npos);
  }
  JackknifeOptions o;
  o.on_degenerate = JackknifeOptions::OnDegenerate::drop;
  const CorrectedEstimate c = jbc(d, *logit, f, o);
  CHECK(c.beta.allFinite());
  CHECK_FALSE(c.warnings.empty());
}

TEST_CASE("jackknife size requirements") {
  const PanelData d = draw(2, 3, 3, 1, "linear");
  const FitResult f = fit(d, *make_family("linear"));
  CHECK_THROWS_AS(sbc(d, *make_family("linear"), f), ValidationError);
  CHECK_THROWS_AS(hbc(d, *make_family("linear"), f), ValidationError);
}

TEST_CASE("method names") {
  for (Method m : {Method::fe, Method::abc, Method::jbc, Method::sbc, Method::hbc, Method::psbc}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("bootstrap"), InputError);
}

TEST_CASE("analytical corrections on a logit fit") {
  const PanelData d = draw(77, 80, 8, 2, "logit");
  const auto logit = make_family("logit");
  const FitResult fe = fit(d, *logit);
  const PanelIndex idx = build_index(d);
  const CorrectedEstimate a1 = abc(d, *logit, fe);
  const BiasEstimates b = estimate_bias(fe, idx);
  CHECK(max_abs(a1.beta - (fe.beta - b.B / idx.tbar - b.D / idx.nbar)) <= 1e-15);
  CHECK(max_abs(a1.vcov - vcov_beta(fe, idx)) == 0.0);

  // iterating moves the estimate by a second-order amount
  const CorrectedEstimate a3 = abc(d, *logit, fe, {{}, 3});
  const double first = max_abs(a1.beta - fe.beta);
  CHECK(max_abs(a3.beta - a1.beta) < 0.25 * first);
  CHECK(a3.iterations == 3);

  // the profile-score root agrees with ABC to first order
  const CorrectedEstimate p = psbc(d, *logit, fe);
  CHECK_FALSE(p.flagged);
  CHECK(max_abs(p.beta - a1.beta) < 0.25 * first);
}

TEST_CASE("sign of the bias estimate agrees with the Monte Carlo bias") {
  McDesign design = calibrated_logit_design(150, 6, 3, 5);
  design.reps = 40;
  design.estimators = {"fe", "abc"};
  const SimReport r = run_mc(design, 4);
  for (const auto& coef : r.coefficients) {
    const auto& fe = r.at("fe", coef);
    const auto& ab = r.at("abc", coef);
    INFO(coef << " FE bias " << fe.bias << " ABC bias " << ab.bias);
    // ABC - FE = -(B/T + D/N): the estimated bias has the sign of the FE error
    const double estimated = fe.mean - ab.mean;
    CHECK(estimated * fe.bias > 0.0);
    CHECK(std::abs(ab.bias) < std::abs(fe.bias));
  }
}

TEST_CASE("poisson: no incidental parameter bias") {
  // expected moments: the plug-ins vanish by orthogonality of x~ in the lambda metric
  const PanelData d = draw(8, 20, 6, 2, "poisson");
  const FitResult f = fit(d, *make_family("poisson"));
  const BiasEstimates e = estimate_bias(f, build_index(d));
  CHECK(max_abs(e.B) <= 1e-10);
  CHECK(max_abs(e.D) <= 1e-10);

  // observed moments: pure noise of order n^-1/2
  auto mean_abs = [](std::size_t n_side) {
    double sb = 0.0, sd = 0.0;
    for (std::uint64_t rep = 0; rep < 40; ++rep) {
      const PanelData p = draw(1000 + rep, n_side, n_side, 1, "poisson");
      const FitResult g = fit(p, *make_family("poisson"));
      const BiasEstimates b = estimate_bias(g, build_index(p), {0, Moments::observed});
      sb += std::abs(b.B(0));
      sd += std::abs(b.D(0));
    }
    return std::pair{sb / 40, sd / 40};
  };
  const auto small = mean_abs(12), large = mean_abs(24);
  INFO("B ratio " << small.first / large.first << " D ratio " << small.second / large.second);
  // n quadruples: the magnitude halves
  CHECK(small.first / large.first > 1.4);
  CHECK(small.first / large.first < 2.8);
  CHECK(small.second / large.second > 1.4);
  CHECK(small.second / large.second < 2.8);
}

TEST_CASE("strictly exogenous design: trimming adds only mean-zero terms") {
  const std::size_t reps = 60;
  const std::size_t d = 1;
  for (std::size_t M : {1u, 2u, 3u, 4u}) {
    double s = 0.0, ss = 0.0;
    for (std::uint64_t rep = 0; rep < reps; ++rep) {
      const PanelData p = draw(500 + rep, 60, 8, d, "logit");
      const FitResult f = fit(p, *make_family("logit"));
      const PanelIndex idx = build_index(p);
      const double diff = estimate_B(f, idx, {M, Moments::expected})(0) - estimate_B(f, idx)(0);
      s += diff;
      ss += diff * diff;
    }
    const double mean = s / reps;
    const double se = std::sqrt((ss / reps - mean * mean) / reps);
    INFO("M=" << M << " mean " << mean << " se " << se);
    CHECK(std::abs(mean) < 3.5 * se);
  }
}
