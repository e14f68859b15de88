#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "panelbc/error.hpp"
#include "panelbc/estimator.hpp"
#include "panelbc/two_way.hpp"

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

}  // namespace

TEST_CASE("linear fit equals the within OLS estimator") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const PanelData d = draw(seed, 30, 8, 3, "linear");
    const FitResult f = fit(d, *make_family("linear"));
    const VectorXd ols = oracle::within_ols(d);
    CHECK(max_abs(f.beta - ols) <= 1e-10);
  }
  const PanelData u = draw(4, 25, 7, 2, "linear", 0.3);
  CHECK(max_abs(fit(u, *make_family("linear")).beta - oracle::within_ols(u)) <= 1e-10);
}

TEST_CASE("fit matches a dense dummy Newton on a 4 x 4 panel") {
  for (const char* name : {"linear", "probit", "logit", "poisson"}) {
    // small binary panels often have no finite MLE; take the first draw that does
    std::uint64_t seed = 40;
    PanelData d = draw(seed, 4, 4, 1, name);
    oracle::DenseFit o = oracle::dense_dummy_newton(d, name);
    while (!(o.converged && o.u.cwiseAbs().maxCoeff() < 10.0) && seed < 140) {
      d = draw(++seed, 4, 4, 1, name);
      o = oracle::dense_dummy_newton(d, name);
    }
    INFO(name << " seed " << seed);
    REQUIRE(o.converged);
    const FitResult f = fit(d, *make_family(name));
    CHECK(max_abs(f.beta - o.beta) <= 1e-8);
    CHECK(max_abs(f.u - o.u) <= 1e-8);
  }
}

TEST_CASE("logit null model") {
  Rng rng(8);
  const std::size_t N = 200, T = 10;
  std::vector<std::size_t> u, t;
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t s = 0; s < T; ++s) {
      u.push_back(i);
      t.push_back(s);
      y.push_back(rng.uniform() < 0.5 ? 1.0 : 0.0);
      x.push_back({rng.normal()});
    }
  }
  const PanelData raw = oracle::make_panel(u, t, y, x);
  const auto logit = make_family("logit");
  const PanelData d = drop_degenerate(raw, *logit).panel.data;
  const FitResult f = fit(d, *logit);
  const double se = std::sqrt(vcov_beta(f, build_index(d))(0, 0));
  CHECK(std::abs(f.beta(0)) < 4.0 * se);
  CHECK(f.alpha.allFinite());
  CHECK(f.gamma.allFinite());
}

TEST_CASE("fit invariants") {
  for (const char* name : {"linear", "probit", "logit", "poisson"}) {
    for (double missing : {0.0, 0.25}) {
      INFO(name << " missing " << missing);
      const PanelData d = draw(100, 40, 9, 2, name, missing);
      const auto fam = make_family(name);
      const PanelIndex idx = build_index(d);
      SolveOptions opts;
      const FitResult f = fit(d, *fam, opts);
      CHECK(f.converged);
      CHECK(f.max_grad <= opts.tol_grad);

      // gamma has observation-count weighted mean zero
      double s = 0.0, scale = 0.0;
      for (std::size_t t = 0; t < idx.periods; ++t) {
        s += static_cast<double>(idx.period_count(t)) * f.gamma(static_cast<Eigen::Index>(t));
        scale += static_cast<double>(idx.period_count(t)) * std::abs(f.gamma(static_cast<Eigen::Index>(t)));
      }
      CHECK(std::abs(s) <= 1e-12 * std::max(1.0, scale));

      // H symmetric positive definite
      CHECK(max_abs(f.H - f.H.transpose()) == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(f.H).eigenvalues().minCoeff() > 0.0);

      // x~ orthogonal to the dummies in the omega metric
      CHECK(orthogonality_residual(f.xtilde, d.x(), f.omega, idx) <= opts.tol_proj);

      // ascent
      for (std::size_t k = 1; k < f.loglik_path.size(); ++k) {
        CHECK(f.loglik_path[k] >= f.loglik_path[k - 1] - 1e-12 * std::abs(f.loglik_path[k - 1]));
      }
    }
  }
}

TEST_CASE("normalization invariance of the starting values") {
  for (const char* name : {"probit", "poisson"}) {
    const PanelData d = draw(7, 30, 6, 2, name);
    const auto fam = make_family(name);
    const FitResult a = fit(d, *fam);
    FitStart s = default_start(d, *fam);
    s.alpha.array() += 0.7;
    s.gamma.array() -= 0.7;
    const FitResult b = fit(d, *fam, {}, s);
    CHECK(max_abs(a.beta - b.beta) <= 1e-10);
    CHECK(max_abs(a.u - b.u) <= 1e-10);
  }
}

TEST_CASE("row order and re-indexing do not change the fit") {
  const PanelData d = draw(12, 20, 6, 2, "logit", 0.2);
  // same panel built from reversed rows, then passed through the subpanel path
  std::vector<std::size_t> u(d.unit().rbegin(), d.unit().rend()), t(d.period().rbegin(), d.period().rend());
  const VectorXd y = d.y().reverse();
  const MatrixXd x = d.x().colwise().reverse();
  const PanelData r(d.units(), d.periods(), u, t, y, x, d.covariate_names(), d.covariate_kinds());
  std::vector<std::size_t> all_u(d.units()), all_t(d.periods());
  for (std::size_t i = 0; i < all_u.size(); ++i) all_u[i] = i;
  for (std::size_t k = 0; k < all_t.size(); ++k) all_t[k] = k;
  const PanelData s = restrict(r, all_u, all_t).data;
  const auto logit = make_family("logit");
  const FitResult a = fit(d, *logit), b = fit(s, *logit);
  CHECK(a.beta == b.beta);
  CHECK(a.u == b.u);
  CHECK(a.H == b.H);
}

TEST_CASE("vcov_beta") {
  SUBCASE("linear: classical within OLS variance") {
    const PanelData d = draw(21, 40, 6, 2, "linear");
    const FitResult f = fit(d, *make_family("linear"));
    const VectorXd w = VectorXd::Ones(static_cast<Eigen::Index>(d.size()));
    const MatrixXd xt = oracle::dense_projection(d, d.x(), w);
    const MatrixXd yt = oracle::dense_projection(d, d.y(), w);
    const VectorXd b = oracle::within_ols(d);
    const VectorXd e = yt.col(0) - xt * b;
    const double sigma2 = e.squaredNorm() / static_cast<double>(d.size());
    const MatrixXd classical = sigma2 * (xt.transpose() * xt).inverse();
    const MatrixXd v = vcov_beta(f, build_index(d));
    CHECK(max_abs(v - classical) <= 1e-12 * max_abs(classical));
    CHECK(f.dispersion == doctest::Approx(sigma2).epsilon(1e-12));
  }
  SUBCASE("dummy-collinear covariate is singular") {
    std::vector<std::size_t> u, t;
    std::vector<double> y;
    std::vector<std::vector<double>> x;
    Rng rng(3);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t s = 0; s < 5; ++s) {
        u.push_back(i);
        t.push_back(s);
        y.push_back(rng.normal());
        x.push_back({rng.normal(), double(i) + 2.0 * double(s)});
      }
    }
    const PanelData d = oracle::make_panel(u, t, y, x);
    CHECK_THROWS_AS(fit(d, *make_family("linear")), ValidationError);
  }
}

TEST_CASE("fit error paths") {
  SUBCASE("disconnected panel names components") {
    const PanelData d = oracle::make_panel({0, 0, 1, 1, 2, 2, 3, 3}, {0, 1, 0, 1, 2, 3, 2, 3},
                                           {1, 2, 3, 4, 5, 6, 7, 8},
                                           {{0.3}, {0.1}, {0.5}, {0.4}, {0.9}, {0.2}, {0.6}, {0.8}});
    try {
      fit(d, *make_family("linear"));
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("2 disconnected components") != std::string::npos);
    }
  }
  SUBCASE("separation") {
    // x perfectly predicts y within every unit
    std::vector<std::size_t> u, t;
    std::vector<double> y;
    std::vector<std::vector<double>> x;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t s = 0; s < 4; ++s) {
        const double v = double((i + s) % 4) - 1.5;
        u.push_back(i);
        t.push_back(s);
        x.push_back({v});
        y.push_back(v > 0 ? 1.0 : 0.0);
      }
    }
    const PanelData d = oracle::make_panel(u, t, y, x);
    CHECK_THROWS_AS(fit(d, *make_family("logit")), SeparationError);
  }
  SUBCASE("iteration limit") {
    const PanelData d = draw(5, 20, 5, 1, "logit");
    SolveOptions o;
    o.max_outer = 1;
    CHECK_THROWS_AS(fit(d, *make_family("logit"), o), ConvergenceError);
  }
}

TEST_CASE("two_way_project examples") {
  const PanelData sq = oracle::make_panel({0, 0, 1, 1}, {0, 1, 0, 1}, {0, 0, 0, 0}, {{1}, {2}, {3}, {5}});
  const PanelIndex idx = build_index(sq);
  const VectorXd ones = VectorXd::Ones(4);
  const MatrixXd xt = two_way_project(sq.x(), ones, idx);
  CHECK(xt(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(xt(1, 0) == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(xt(2, 0) == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(xt(3, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(max_abs(xt - oracle::dense_projection(sq, sq.x(), ones)) <= 1e-14);

  const MatrixXd constant = MatrixXd::Constant(4, 1, 3.5);
  VectorXd w(4);
  w << 0.3, 1.2, 2.0, 0.7;
  CHECK(max_abs(two_way_project(constant, w, idx)) <= 1e-14);

  const PanelData one = oracle::make_panel({0, 0, 0}, {0, 1, 2}, {0, 0, 0}, {{1.0}, {4.0}, {-2.0}});
  CHECK(max_abs(two_way_project(one.x(), VectorXd::Ones(3), build_index(one))) <= 1e-14);
}

TEST_CASE("projection: dense oracle, idempotence and both solver paths") {
  for (double missing : {0.0, 0.3}) {
    const PanelData d = draw(55, 12, 7, 2, "linear", missing);
    const PanelIndex idx = build_index(d);
    Rng rng(1);
    VectorXd w(static_cast<Eigen::Index>(d.size()));
    for (auto& v : w) v = 0.1 + rng.uniform();
    const MatrixXd ref = oracle::dense_projection(d, d.x(), w);
    TwoWayOptions direct, alternating;
    alternating.method = TwoWayOptions::Method::alternating;
    const MatrixXd a = two_way_project(d.x(), w, idx, direct);
    const MatrixXd b = two_way_project(d.x(), w, idx, alternating);
    CHECK(max_abs(a - ref) <= 1e-10);
    CHECK(max_abs(b - ref) <= 1e-8);
    CHECK(max_abs(two_way_project(a, w, idx) - a) <= 1e-10);
    CHECK(orthogonality_residual(a, d.x(), w, idx) <= 1e-10);
  }
}
