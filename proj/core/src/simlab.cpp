#include "panelbc/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "panelbc/error.hpp"
#include "panelbc/jackknife.hpp"

namespace panelbc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kKeptMessages = 5;

std::size_t parse_count(const std::string& token, const std::string& text) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != text.size() || text.empty()) {
    throw InputError("bad estimator token '" + token + "'");
  }
  return static_cast<std::size_t>(v);
}

// stationary unit-variance AR(1) path of length T
void ar1_path(double rho, std::size_t T, Rng& rng, std::vector<double>& s) {
  s.resize(T);
  const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  double prev = rng.normal();
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) prev = rho * prev + innov * rng.normal();
    s[t] = prev;
  }
}

VectorXd draw_effects(const VectorXd& fixed, std::size_t count, double mean, double sd, Rng& rng,
                      const char* what) {
  if (fixed.size() > 0) {
    if (static_cast<std::size_t>(fixed.size()) != count) {
      throw InputError(std::string("fixed ") + what + " has the wrong length");
    }
    return fixed;
  }
  VectorXd v(static_cast<Eigen::Index>(count));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = mean + sd * rng.normal();
  return v;
}

std::optional<EffectSpec> ape_spec(const McDesign& design, const PanelData& data) {
  if (!design.ape_covariate) return std::nullopt;
  const auto k = data.covariate_index(*design.ape_covariate);
  if (!k) throw InputError("APE covariate '" + *design.ape_covariate + "' not in the design");
  EffectSpec spec;
  spec.covariate = *k;
  spec.mode = data.covariate_kinds()[*k] == CovariateKind::binary ? EffectSpec::Mode::discrete
                                                                  : EffectSpec::Mode::marginal;
  return spec;
}

}  // namespace

void check_design(const McDesign& d) {
  if (d.reps < 1) throw InputError("design needs reps >= 1");
  if (d.N < 2 || d.T < 2) throw InputError("design needs N >= 2 and T >= 2");
  if (!(d.level > 0.0 && d.level < 1.0)) throw InputError("coverage level must be in (0, 1)");
  make_family(d.family, d.sigma2);
  if (d.process == McDesign::Process::ar1_outcome) {
    if (d.family != "linear") throw InputError("the AR(1) outcome design is linear");
    if (d.beta0.size() != 1) throw InputError("the AR(1) outcome design has one coefficient");
    if (std::abs(d.beta0(0)) >= 1.0) throw InputError("the AR(1) coefficient must be in (-1, 1)");
    if (!d.covariates.empty()) throw InputError("the AR(1) outcome design takes no covariates");
  } else {
    if (d.covariates.empty()) throw InputError("design needs at least one covariate");
    if (static_cast<std::size_t>(d.beta0.size()) != d.covariates.size()) {
      throw InputError("beta has " + std::to_string(d.beta0.size()) + " entries for " +
                       std::to_string(d.covariates.size()) + " covariates");
    }
    for (const auto& c : d.covariates) {
      if (std::abs(c.rho) >= 1.0) throw InputError("covariate '" + c.name + "' needs |rho| < 1");
    }
  }
  if (d.estimators.empty()) throw InputError("design lists no estimators");
  for (const auto& e : d.estimators) parse_estimator(e, d.trim);
}

EstimatorSpec parse_estimator(const std::string& token, std::size_t default_trim) {
  EstimatorSpec spec;
  spec.label = token;
  spec.trim = default_trim;
  std::size_t start = 0;
  bool first = true;
  while (start <= token.size()) {
    const std::size_t end = std::min(token.find('_', start), token.size());
    const std::string part = token.substr(start, end - start);
    if (first) {
      spec.method = parse_method(part);
      first = false;
    } else if (part.size() > 1 && part[0] == 'm' &&
               (spec.method == Method::abc || spec.method == Method::psbc)) {
      spec.trim = parse_count(token, part.substr(1));
    } else if (part.size() > 1 && part[0] == 'k' && spec.method == Method::abc) {
      spec.iterations = parse_count(token, part.substr(1));
      if (spec.iterations < 1) throw InputError("bad estimator token '" + token + "'");
    } else {
      throw InputError("bad estimator token '" + token + "'");
    }
    start = end + 1;
  }
  return spec;
}

SimPanel simulate_panel(const McDesign& design, Rng& rng) {
  const FamilyPtr family = make_family(design.family, design.sigma2);
  const std::size_t N = design.N, T = design.T;
  const VectorXd alpha =
      draw_effects(design.alpha_fixed, N, design.alpha_mean, design.alpha_sd, rng, "alpha");
  const VectorXd gamma =
      draw_effects(design.gamma_fixed, T, design.gamma_mean, design.gamma_sd, rng, "gamma");
  const std::size_t n = N * T;
  std::vector<std::size_t> unit(n), period(n);
  VectorXd y(static_cast<Eigen::Index>(n));
  MatrixXd x;
  std::vector<std::string> names;
  std::vector<CovariateKind> kinds;

  if (design.process == McDesign::Process::ar1_outcome) {
    const double rho = design.beta0(0);
    const double sd = std::sqrt(design.sigma2);
    x.resize(static_cast<Eigen::Index>(n), 1);
    names = {"y_lag1"};
    kinds = {CovariateKind::continuous};
    for (std::size_t i = 0; i < N; ++i) {
      const auto ai = static_cast<Eigen::Index>(i);
      double prev = alpha(ai) / (1.0 - rho) + sd / std::sqrt(1.0 - rho * rho) * rng.normal();
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t r = i * T + t;
        const auto p = static_cast<Eigen::Index>(r);
        unit[r] = i;
        period[r] = t;
        x(p, 0) = prev;
        y(p) = rho * prev + alpha(ai) + gamma(static_cast<Eigen::Index>(t)) + sd * rng.normal();
        prev = y(p);
      }
    }
  } else {
    const auto d = static_cast<Eigen::Index>(design.covariates.size());
    x.resize(static_cast<Eigen::Index>(n), d);
    for (const auto& c : design.covariates) {
      names.push_back(c.name);
      kinds.push_back(c.kind);
    }
    std::vector<double> s;
    for (std::size_t i = 0; i < N; ++i) {
      const double a = alpha(static_cast<Eigen::Index>(i));
      for (Eigen::Index k = 0; k < d; ++k) {
        const auto& c = design.covariates[static_cast<std::size_t>(k)];
        ar1_path(c.rho, T, rng, s);
        for (std::size_t t = 0; t < T; ++t) {
          const auto p = static_cast<Eigen::Index>(i * T + t);
          x(p, k) = c.kind == CovariateKind::binary
                        ? (c.shift + c.load * a + s[t] > 0.0 ? 1.0 : 0.0)
                        : c.shift + c.load * a + c.scale * s[t];
        }
      }
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t r = i * T + t;
        const auto p = static_cast<Eigen::Index>(r);
        unit[r] = i;
        period[r] = t;
        const double u = x.row(p).dot(design.beta0) + a + gamma(static_cast<Eigen::Index>(t));
        y(p) = family->sample(u, rng);
      }
    }
  }

  PanelData data(N, T, std::move(unit), std::move(period), std::move(y), std::move(x),
                 std::move(names), std::move(kinds));
  if (!design.drop_degenerate || !family->needs_variation()) {
    return SimPanel{std::move(data), alpha, gamma, 0, 0};
  }
  CleanResult clean = drop_degenerate(data, *family, ValidateOptions{.min_obs = 1});
  VectorXd a(static_cast<Eigen::Index>(clean.panel.parent_unit.size()));
  VectorXd g(static_cast<Eigen::Index>(clean.panel.parent_period.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a(i) = alpha(static_cast<Eigen::Index>(clean.panel.parent_unit[static_cast<std::size_t>(i)]));
  }
  for (Eigen::Index t = 0; t < g.size(); ++t) {
    g(t) = gamma(static_cast<Eigen::Index>(clean.panel.parent_period[static_cast<std::size_t>(t)]));
  }
  if (clean.panel.data.units() < 2 || clean.panel.data.periods() < 2) {
    throw ValidationError("simulated panel degenerate after dropping constant outcomes");
  }
  return SimPanel{std::move(clean.panel.data), std::move(a), std::move(g), clean.dropped_units,
                  clean.dropped_periods};
}

Replication run_replication(const McDesign& design, const std::vector<EstimatorSpec>& estimators,
                            std::size_t rep) {
  Replication out;
  const Rng base(design.seed, 0x51a1);
  Rng rng = base.substream(rep);
  try {
    const FamilyPtr family = make_family(design.family, design.sigma2);
    const SimPanel sim = simulate_panel(design, rng);
    out.dropped_units = sim.dropped_units;
    out.dropped_periods = sim.dropped_periods;
    const PanelData& data = sim.data;
    const PanelIndex idx = build_index(data);
    const auto d = static_cast<Eigen::Index>(data.num_covariates());
    const std::optional<EffectSpec> spec = ape_spec(design, data);
    const Eigen::Index dim = d + (spec ? 1 : 0);

    out.truth.resize(dim);
    out.truth.head(d) = design.beta0;
    if (spec) {
      double acc = 0.0;
      for (std::size_t r = 0; r < data.size(); ++r) {
        const auto p = static_cast<Eigen::Index>(r);
        const double phi = sim.alpha(static_cast<Eigen::Index>(data.unit()[r])) +
                           sim.gamma(static_cast<Eigen::Index>(data.period()[r]));
        acc += partial_effect(*family, data.x().row(p).transpose(), design.beta0, phi, *spec);
      }
      out.truth(d) = acc / static_cast<double>(data.size());
    }

    const FitResult fe = fit(data, *family, design.solve);
    const VectorXd fe_se = vcov_beta(fe, idx).diagonal().cwiseSqrt();
    std::optional<APEResult> fe_ape;
    if (spec) fe_ape = ape(data, *family, fe, *spec, Target::nt);

    auto pack = [&](const VectorXd& b, std::optional<double> effect) {
      VectorXd v = VectorXd::Constant(dim, kNaN);
      v.head(d) = b;
      if (spec && effect) v(d) = *effect;
      return v;
    };
    VectorXd se = VectorXd::Constant(dim, kNaN);
    se.head(d) = fe_se;
    if (fe_ape) se(d) = fe_ape->se;

    JackknifeRequest req;
    for (const auto& e : estimators) {
      req.jbc = req.jbc || e.method == Method::jbc;
      req.sbc = req.sbc || e.method == Method::sbc;
      req.hbc = req.hbc || e.method == Method::hbc;
    }
    JackknifeResult jk;
    if (req.jbc || req.sbc || req.hbc) {
      JackknifeOptions jo;
      jo.splits = design.splits;
      jo.seed = Rng::mix(design.seed, rep);
      jo.on_degenerate = JackknifeOptions::OnDegenerate::drop;
      jo.solve = design.solve;
      jo.solve.parameters_only = true;
      const Statistic stat = [&](const PanelData& sd, const FitResult& f) {
        VectorXd v(dim);
        v.head(d) = f.beta;
        if (spec) v(d) = effect_matrix(sd, *family, f, *spec).mean();
        return v;
      };
      jk = jackknife(data, *family, fe, stat, req, jo);
    }

    for (const auto& e : estimators) {
      VectorXd est;
      switch (e.method) {
        case Method::fe:
          est = pack(fe.beta, fe_ape ? std::optional<double>(fe_ape->estimate) : std::nullopt);
          break;
        case Method::abc: {
          AbcOptions o;
          o.bias = BiasOptions{e.trim, design.moments};
          o.iterations = e.iterations;
          est = pack(abc(data, *family, fe, o, design.solve).beta, std::nullopt);
          break;
        }
        case Method::psbc: {
          PsbcOptions o;
          o.bias = BiasOptions{e.trim, design.moments};
          est = pack(psbc(data, *family, fe, o, design.solve).beta, std::nullopt);
          break;
        }
        case Method::jbc: est = jk.jbc; break;
        case Method::sbc: est = jk.sbc; break;
        case Method::hbc: est = jk.hbc; break;
      }
      if (!est.allFinite() && !(spec && est.head(d).allFinite())) {
        throw ConvergenceError("non-finite estimate from " + e.label);
      }
      out.estimate.push_back(std::move(est));
      out.se.push_back(se);
    }
    out.ok = true;
  } catch (const Error& e) {
    out.ok = false;
    out.error = e.what();
    out.estimate.clear();
    out.se.clear();
  }
  return out;
}

SimReport aggregate(const McDesign& design, const std::vector<EstimatorSpec>& estimators,
                    std::vector<Replication> reps) {
  SimReport report;
  report.design = design;
  report.reps = reps.size();
  for (const auto& e : estimators) report.estimators.push_back(e.label);
  if (design.process == McDesign::Process::ar1_outcome) {
    report.coefficients = {"y_lag1"};
  } else {
    for (const auto& c : design.covariates) report.coefficients.push_back(c.name);
  }
  if (design.ape_covariate) report.coefficients.push_back("ape:" + *design.ape_covariate);

  for (const auto& r : reps) {
    if (r.ok) continue;
    ++report.failures;
    if (report.failure_messages.size() < kKeptMessages) report.failure_messages.push_back(r.error);
  }
  const double z = normal_quantile(0.5 * (1.0 + design.level));

  for (std::size_t e = 0; e < estimators.size(); ++e) {
    for (std::size_t k = 0; k < report.coefficients.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      CoefficientStats s;
      s.estimator = estimators[e].label;
      s.coefficient = report.coefficients[k];
      double sum_err = 0.0, sum_est = 0.0, sum_truth = 0.0;
      std::size_t hits = 0;
      for (const auto& r : reps) {
        if (!r.ok || !std::isfinite(r.estimate[e](kk))) continue;
        const double err = r.estimate[e](kk) - r.truth(kk);
        sum_err += err;
        sum_est += r.estimate[e](kk);
        sum_truth += r.truth(kk);
        if (std::abs(err) <= z * r.se[e](kk)) ++hits;
        ++s.count;
      }
      if (s.count == 0) continue;
      const double R = static_cast<double>(s.count);
      s.bias = sum_err / R;
      s.mean = sum_est / R;
      s.truth = sum_truth / R;
      double ss = 0.0;
      for (const auto& r : reps) {
        if (!r.ok || !std::isfinite(r.estimate[e](kk))) continue;
        const double dev = r.estimate[e](kk) - r.truth(kk) - s.bias;
        ss += dev * dev;
      }
      s.sd = std::sqrt(ss / R);
      s.rmse = std::sqrt(s.bias * s.bias + s.sd * s.sd);
      s.coverage = static_cast<double>(hits) / R;
      s.mc_se = s.sd / std::sqrt(R);
      if (s.truth != 0.0) {
        s.bias_pct = 100.0 * s.bias / s.truth;
        s.sd_pct = 100.0 * s.sd / std::abs(s.truth);
        s.rmse_pct = 100.0 * s.rmse / std::abs(s.truth);
      } else {
        s.bias_pct = s.sd_pct = s.rmse_pct = kNaN;
      }
      report.rows.push_back(s);
    }
  }
  report.replications = std::move(reps);
  return report;
}

SimReport run_mc(const McDesign& design, std::size_t workers) {
  check_design(design);
  std::vector<EstimatorSpec> estimators;
  for (const auto& e : design.estimators) estimators.push_back(parse_estimator(e, design.trim));
  std::vector<Replication> reps(design.reps);
  parallel_for(design.reps, workers,
               [&](std::size_t r) { reps[r] = run_replication(design, estimators, r); });
  SimReport report = aggregate(design, estimators, std::move(reps));
  if (5 * report.failures > report.reps) {
    std::string msg = std::to_string(report.failures) + " of " + std::to_string(report.reps) +
                      " replications failed";
    if (!report.failure_messages.empty()) msg += " (first: " + report.failure_messages[0] + ")";
    throw ConvergenceError(msg);
  }
  return report;
}

const CoefficientStats& SimReport::at(const std::string& estimator,
                                      const std::string& coefficient) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && r.coefficient == coefficient) return r;
  }
  throw InputError("no report row for " + estimator + " / " + coefficient);
}

McDesign calibrated_logit_design(std::size_t N, std::size_t T, std::size_t d_beta,
                                 std::uint64_t seed) {
  if (d_beta == 0) throw InputError("d_beta must be positive");
  // two persistent binary indicators (one more common in high-alpha units, one
  // less) and a continuous AR(1)
  const CovariateProcess base[3] = {
      {"b1", CovariateKind::binary, 0.8, -0.6, 1.0, -0.3},
      {"b2", CovariateKind::binary, 0.7, 0.4, 1.0, -0.2},
      {"c1", CovariateKind::continuous, 0.6, 0.5, 1.0, 0.0},
  };
  const double beta[3] = {-1.0, -0.8, 0.5};
  McDesign d;
  d.name = "calibrated_logit";
  d.family = "logit";
  d.N = N;
  d.T = T;
  d.seed = seed;
  d.beta0.resize(static_cast<Eigen::Index>(d_beta));
  for (std::size_t k = 0; k < d_beta; ++k) {
    CovariateProcess c = base[k % 3];
    if (k >= 3) c.name += "_" + std::to_string(k / 3 + 1);
    d.covariates.push_back(c);
    d.beta0(static_cast<Eigen::Index>(k)) = beta[k % 3];
  }
  d.estimators = {"fe", "abc", "sbc", "hbc"};
  return d;
}

double coverage_theory(double shift, double level) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("coverage level must be in (0, 1)");
  if (std::isinf(shift)) return 0.0;
  const double z = normal_quantile(0.5 * (1.0 + level));
  return normal_cdf(z - shift) - normal_cdf(-z - shift);
}

// ---------------------------------------------------------------------------
// Normal variance
// ---------------------------------------------------------------------------

namespace {

void check_normal_args(std::size_t n, double sigma2, VarianceEstimator est) {
  if (n < 4) throw InputError("normal variance example needs n >= 4");
  if (est == VarianceEstimator::sbc && n % 2 != 0) throw InputError("SBC needs an even n");
  if (!(sigma2 > 0.0)) throw InputError("sigma^2 must be positive");
}

double abc_factor(double n, std::size_t k) {
  double c = 0.0, p = 1.0;
  for (std::size_t r = 0; r <= k; ++r, p /= n) c += p;
  return c;
}

}  // namespace

Moments2 normal_variance_oracle(std::size_t n, double sigma2, VarianceEstimator est,
                                std::size_t k) {
  check_normal_args(n, sigma2, est);
  const double nn = static_cast<double>(n);
  const double s4 = sigma2 * sigma2;
  const double var_mle = 2.0 * s4 * (nn - 1.0) / (nn * nn);
  Moments2 m;
  switch (est) {
    case VarianceEstimator::mle:
      m.bias = -sigma2 / nn;
      m.variance = var_mle;
      break;
    case VarianceEstimator::abc:
      m.bias = -sigma2 / (nn * nn);
      m.variance = (nn + 1.0) * (nn + 1.0) / (nn * nn) * var_mle;
      break;
    case VarianceEstimator::abck: {
      const double c = abc_factor(nn, k);
      m.bias = -sigma2 / std::pow(nn, static_cast<double>(k + 1));
      m.variance = c * c * var_mle;
      break;
    }
    case VarianceEstimator::jbc:
      m.bias = 0.0;
      m.variance = nn * nn / ((nn - 1.0) * (nn - 1.0)) * var_mle;
      break;
    case VarianceEstimator::sbc:
      // within-half sum of squares plus half the squared mean difference
      m.bias = 0.0;
      m.variance = 2.0 * s4 * (nn + 2.0) / (nn * nn);
      break;
  }
  return m;
}

NormalVarianceMc normal_variance_mc_all(std::size_t n, double sigma2, std::size_t reps,
                                        std::uint64_t seed, std::size_t k) {
  check_normal_args(n, sigma2, VarianceEstimator::sbc);
  if (reps < 2) throw InputError("need at least two replications");
  const double nn = static_cast<double>(n);
  const double sd = std::sqrt(sigma2);
  const std::size_t h = n / 2;
  Rng rng(seed, 0x7a11);
  std::vector<double> z(n);

  // running sums of value, value^2, value^3, value^4 (shifted by sigma2)
  double s1[5] = {}, s2[5] = {}, s3[5] = {}, s4[5] = {};
  double d1[4] = {}, d2[4] = {};
  NormalVarianceMc out;
  out.reps = reps;

  auto var_of = [](const double* v, std::size_t begin, std::size_t end) {
    double m = 0.0;
    for (std::size_t j = begin; j < end; ++j) m += v[j];
    m /= static_cast<double>(end - begin);
    double ss = 0.0;
    for (std::size_t j = begin; j < end; ++j) ss += (v[j] - m) * (v[j] - m);
    return ss / static_cast<double>(end - begin);
  };

  for (std::size_t r = 0; r < reps; ++r) {
    for (auto& v : z) v = 1.0 + sd * rng.normal();
    const double mle = var_of(z.data(), 0, n);
    // plug-in bias of the MLE is -sigma^2: one and k analytical steps
    const double abc1 = mle + mle / nn;
    double abck = mle;
    for (std::size_t it = 0; it < k; ++it) abck = mle + abck / nn;
    // leave-one-out refits with O(1) updates of the centered sums
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= nn;
    double css = 0.0;
    for (double v : z) css += (v - mean) * (v - mean);
    double loo = 0.0;
    for (double v : z) {
      const double dv = v - mean;
      // SS without j: css - dv^2 n/(n-1)
      loo += (css - dv * dv * nn / (nn - 1.0)) / (nn - 1.0);
    }
    loo /= nn;
    const double jbc = nn * mle - (nn - 1.0) * loo;
    out.jbc_closed_form_gap = std::max(out.jbc_closed_form_gap, std::abs(jbc - nn * mle / (nn - 1.0)));
    const double halves = 0.5 * (var_of(z.data(), 0, h) + var_of(z.data(), h, n));
    const double sbc = 2.0 * mle - halves;

    const double v[5] = {mle, abc1, abck, jbc, sbc};
    for (int e = 0; e < 5; ++e) {
      const double x = v[e] - sigma2;
      s1[e] += x;
      s2[e] += x * x;
      s3[e] += x * x * x;
      s4[e] += x * x * x * x;
    }
    for (int e = 0; e < 4; ++e) {
      const double dd = v[e + 1] - v[e];
      d1[e] += dd;
      d2[e] += dd * dd;
    }
  }

  const double R = static_cast<double>(reps);
  for (int e = 0; e < 5; ++e) {
    const double m1 = s1[e] / R;
    const double var = s2[e] / R - m1 * m1;
    // central fourth moment from raw moments of the shifted values
    const double m2 = s2[e] / R, m3 = s3[e] / R, m4r = s4[e] / R;
    const double mu4 = m4r - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1 * m1 * m1 * m1;
    Moments2& m = out.moments[e];
    m.bias = m1;
    m.variance = var * R / (R - 1.0);
    m.bias_se = std::sqrt(var / R);
    m.variance_se = std::sqrt(std::max(0.0, mu4 - var * var) / R);
  }
  for (int e = 0; e < 4; ++e) {
    const double m = d1[e] / R;
    out.bias_step[e] = m;
    out.bias_step_se[e] = std::sqrt(std::max(0.0, d2[e] / R - m * m) / R);
  }
  return out;
}

Moments2 normal_variance_mc(std::size_t n, double sigma2, VarianceEstimator est, std::size_t reps,
                            std::uint64_t seed, std::size_t k) {
  check_normal_args(n, sigma2, est);
  return normal_variance_mc_all(n, sigma2, reps, seed, k).moments[static_cast<int>(est)];
}

}  // namespace panelbc
