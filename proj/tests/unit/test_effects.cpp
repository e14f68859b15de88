#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "panelbc/effects.hpp"
#include "panelbc/error.hpp"

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

// logit panel with one continuous and one binary covariate
PanelData logit_panel(std::uint64_t seed, std::size_t N, std::size_t T) {
  Rng rng(seed);
  const auto logit = make_family("logit");
  std::vector<std::size_t> u, t;
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  std::vector<double> gamma(T);
  for (auto& g : gamma) g = 0.5 * rng.normal();
  for (std::size_t i = 0; i < N; ++i) {
    const double a = rng.normal();
    for (std::size_t s = 0; s < T; ++s) {
      const double c = rng.normal() + 0.5 * a;
      const double b = rng.normal() + 0.3 * a > 0 ? 1.0 : 0.0;
      u.push_back(i);
      t.push_back(s);
      x.push_back({c, b});
      y.push_back(simulate_outcome(*logit, 0.6 * c - 0.8 * b + a + gamma[s], rng));
    }
  }
  return drop_degenerate(oracle::make_panel(u, t, y, x), *logit).panel.data;
}

double cluster(const PanelData& d, const VectorXd& e, bool units) {
  const std::size_t G = units ? d.units() : d.periods();
  std::vector<double> sum(G, 0.0), cnt(G, 0.0);
  for (std::size_t r = 0; r < d.size(); ++r) {
    const std::size_t g = units ? d.unit()[r] : d.period()[r];
    sum[g] += e(static_cast<Eigen::Index>(r));
    cnt[g] += 1.0;
  }
  const double mean = e.mean();
  double ss = 0.0;
  for (std::size_t g = 0; g < G; ++g) ss += std::pow(sum[g] / cnt[g] - mean, 2);
  return ss / (double(G) * double(G - 1));
}

}  // namespace

TEST_CASE("linear: the APE of a continuous covariate is its coefficient") {
  const PanelData d = draw(1, 30, 6, 2, "linear", 0.2);
  const auto lin = make_family("linear");
  const FitResult f = fit(d, *lin);
  const MatrixXd V = vcov_beta(f, build_index(d));
  for (std::size_t k = 0; k < 2; ++k) {
    const APEResult a = ape(d, *lin, f, {k, EffectSpec::Mode::marginal}, Target::nt);
    CHECK(a.estimate == doctest::Approx(f.beta(static_cast<Eigen::Index>(k))).epsilon(1e-14));
    CHECK(a.se == doctest::Approx(std::sqrt(V(k, k))).epsilon(1e-12));
    // constant effects: the cluster terms vanish
    const APEResult p = ape(d, *lin, f, {k, EffectSpec::Mode::marginal}, Target::pop);
    CHECK(p.var_units <= 1e-28);
    CHECK(p.var_periods <= 1e-28);
  }
}

TEST_CASE("poisson: the marginal APE is beta times the mean outcome") {
  // the unit first-order conditions give sum exp(u) = sum y
  const PanelData d = draw(5, 40, 7, 2, "poisson", 0.1);
  const auto pois = make_family("poisson");
  const FitResult f = fit(d, *pois);
  const double ybar = d.y().mean();
  for (std::size_t k = 0; k < 2; ++k) {
    const APEResult a = ape(d, *pois, f, {k, EffectSpec::Mode::marginal}, Target::nt);
    CHECK(a.estimate == doctest::Approx(f.beta(static_cast<Eigen::Index>(k)) * ybar).epsilon(1e-9));
  }
}

TEST_CASE("effect_matrix evaluates at the fitted effects") {
  const PanelData d = logit_panel(3, 60, 6);
  const auto logit = make_family("logit");
  const FitResult f = fit(d, *logit);
  const EffectSpec spec{1, EffectSpec::Mode::discrete, 0.0, 1.0};
  const VectorXd e = effect_matrix(d, *logit, f, spec);
  for (Eigen::Index p = 0; p < e.size(); p += 7) {
    const double phi = f.u(p) - d.x().row(p).dot(f.beta);
    const double hi = 1.0 / (1.0 + std::exp(-(phi + f.beta(0) * d.x()(p, 0) + f.beta(1))));
    const double lo = 1.0 / (1.0 + std::exp(-(phi + f.beta(0) * d.x()(p, 0))));
    CHECK(e(p) == doctest::Approx(hi - lo).epsilon(1e-12));
  }
}

TEST_CASE("delta-method gradient matches differentiating the profiled APE") {
  const PanelData d = logit_panel(4, 50, 7);
  const auto logit = make_family("logit");
  const FitResult f = fit(d, *logit);
  const PanelIndex idx = build_index(d);
  for (const EffectSpec spec : {EffectSpec{0, EffectSpec::Mode::marginal}, EffectSpec{1, EffectSpec::Mode::discrete}}) {
    VectorXd jac(2);
    for (Eigen::Index k = 0; k < 2; ++k) {
      jac(k) = oracle::central_difference(
          [&](double v) {
            VectorXd b = f.beta;
            b(k) = v;
            SolveOptions o;
            o.tol_grad = 1e-13;
            return effect_matrix(d, *logit, profile_at(d, *logit, b, o), spec).mean();
          },
          f.beta(k), 1e-4);
    }
    const APEResult a = ape(d, *logit, f, spec, Target::nt);
    const double expect = jac.dot(vcov_beta(f, idx) * jac);
    CHECK(a.var_estimation == doctest::Approx(expect).epsilon(1e-6));
    CHECK(a.var_units == 0.0);
    CHECK(a.var_periods == 0.0);
    CHECK(a.se == doctest::Approx(std::sqrt(expect)).epsilon(1e-6));
  }
}

TEST_CASE("targets add cluster terms") {
  const PanelData d = logit_panel(8, 80, 6);
  const auto logit = make_family("logit");
  const FitResult f = fit(d, *logit);
  const EffectSpec spec{0, EffectSpec::Mode::marginal};
  const APEResult nt = ape(d, *logit, f, spec, Target::nt);
  const APEResult pop = ape(d, *logit, f, spec, Target::pop);
  const APEResult t = ape(d, *logit, f, spec, Target::t);
  CHECK(nt.estimate == pop.estimate);
  CHECK(nt.estimate == t.estimate);
  CHECK(pop.var_units == doctest::Approx(cluster(d, nt.effects, true)).epsilon(1e-12));
  CHECK(pop.var_periods == doctest::Approx(cluster(d, nt.effects, false)).epsilon(1e-12));
  CHECK(t.var_units == pop.var_units);
  CHECK(t.var_periods == 0.0);
  CHECK(pop.se >= t.se);
  CHECK(t.se >= nt.se);
}

TEST_CASE("effect spec checks") {
  const PanelData d = logit_panel(9, 20, 5);
  CHECK_THROWS_AS(check_effect_spec(d, {0, EffectSpec::Mode::discrete}), InputError);
  CHECK_THROWS_AS(check_effect_spec(d, {1, EffectSpec::Mode::marginal}), InputError);
  CHECK_THROWS_AS(check_effect_spec(d, {2, EffectSpec::Mode::marginal}), InputError);
  CHECK_NOTHROW(check_effect_spec(d, {1, EffectSpec::Mode::discrete}));
  CHECK(parse_target("pop") == Target::pop);
  CHECK_THROWS_AS(parse_target("population"), InputError);
}

TEST_CASE("corrected APE") {
  SUBCASE("linear: jackknife of the APE is the jackknife of the coefficient") {
    const PanelData d = draw(12, 12, 6, 1, "linear");
    const auto lin = make_family("linear");
    const FitResult f = fit(d, *lin);
    const EffectSpec spec{0, EffectSpec::Mode::marginal};
    for (Method m : {Method::jbc, Method::sbc, Method::hbc}) {
      JackknifeOptions o;
      o.splits = 4;
      const APEResult a = corrected_ape(d, *lin, f, spec, Target::nt, m, o);
      const CorrectedEstimate c = m == Method::jbc ? jbc(d, *lin, f, o) : m == Method::sbc ? sbc(d, *lin, f, o) : hbc(d, *lin, f, o);
      CHECK(a.estimate == doctest::Approx(c.beta(0)).epsilon(1e-9));
      CHECK(a.se == ape(d, *lin, f, spec, Target::nt).se);
    }
  }
  SUBCASE("logit jackknife moves the APE by a small amount") {
    const PanelData d = logit_panel(13, 60, 8);
    const auto logit = make_family("logit");
    const FitResult f = fit(d, *logit);
    const EffectSpec spec{1, EffectSpec::Mode::discrete};
    JackknifeOptions o;
    o.on_degenerate = JackknifeOptions::OnDegenerate::drop;
    const APEResult base = ape(d, *logit, f, spec, Target::nt);
    const APEResult h = corrected_ape(d, *logit, f, spec, Target::nt, Method::hbc, o);
    CHECK(std::isfinite(h.estimate));
    CHECK(std::abs(h.estimate - base.estimate) < 2.0 * base.se);
    CHECK(h.subestimates.size() == d.units() + 2);
  }
  CHECK_THROWS_AS(corrected_ape(draw(2, 6, 5, 1, "linear"), *make_family("linear"),
                                fit(draw(2, 6, 5, 1, "linear"), *make_family("linear")),
                                {0, EffectSpec::Mode::marginal}, Target::nt, Method::abc),
                  InputError);
}

TEST_CASE("standard error of the population APE shrinks like min(N, T)^-1/2") {
  // Poisson with dispersed effects, so the cluster terms dominate the
  // estimation term (which falls like (NT)^-1/2) already at these sizes
  const auto pois = make_family("poisson");
  const EffectSpec spec{0, EffectSpec::Mode::marginal};
  double se[3];
  const std::size_t sides[3] = {25, 50, 100};
  for (int k = 0; k < 3; ++k) {
    const std::size_t n = sides[k];
    double sum = 0.0;
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
      Rng rng(300 + n + rep);
      std::vector<std::size_t> u, t;
      std::vector<double> y;
      std::vector<std::vector<double>> x;
      std::vector<double> gamma(n);
      for (auto& g : gamma) g = 0.5 * rng.normal();
      for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.normal();
        for (std::size_t s = 0; s < n; ++s) {
          const double c = rng.normal() + 0.5 * a;
          u.push_back(i);
          t.push_back(s);
          x.push_back({c});
          y.push_back(simulate_outcome(*pois, 0.3 * c + a + gamma[s], rng));
        }
      }
      const PanelData d = drop_degenerate(oracle::make_panel(u, t, y, x), *pois).panel.data;
      sum += ape(d, *pois, fit(d, *pois), spec, Target::pop).se;
    }
    se[k] = sum / 20;
  }
  for (int k = 0; k < 2; ++k) {
    INFO("N = T = " << sides[k] << " ratio " << se[k] / se[k + 1]);
    CHECK(se[k] / se[k + 1] >= 1.41 - 0.15);
    CHECK(se[k] / se[k + 1] <= 1.41 + 0.15);
  }
}
