#include "panelbc/family.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "panelbc/error.hpp"

namespace panelbc {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("normal_quantile: probability outside (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

namespace {

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// ---------------------------------------------------------------------------

class LinearFamily final : public Family {
 public:
  explicit LinearFamily(double sigma2) : sigma2_(sigma2), sigma_(std::sqrt(sigma2)) {}

  std::string_view name() const override { return "linear"; }
  bool has_dispersion() const override { return true; }
  bool in_support(double y) const override { return std::isfinite(y); }

  // Index part with unit scale; the fitted dispersion rescales all derivatives.
  IndexDerivs derivs(double y, double u) const override {
    const double e = y - u;
    return {-0.5 * e * e - 0.5 * std::log(2.0 * std::numbers::pi), e, -1.0, 0.0};
  }
  double weight(double) const override { return 1.0 / sigma2_; }
  ExpectedMoments expected_moments(double) const override { return {1.0 / sigma2_, 0.0, 0.0}; }
  double mean(double u) const override { return u; }
  double mean_d1(double) const override { return 1.0; }
  double mean_d2(double) const override { return 0.0; }
  double sample(double u, Rng& rng) const override { return u + sigma_ * rng.normal(); }
  double start_index(double m) const override { return m; }

 private:
  double sigma2_;
  double sigma_;
};

// ---------------------------------------------------------------------------

class LogitFamily final : public Family {
 public:
  std::string_view name() const override { return "logit"; }
  bool binary_outcome() const override { return true; }
  bool needs_variation() const override { return true; }
  bool in_support(double y) const override { return y == 0.0 || y == 1.0; }

  static double cdf(double u) {
    return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
  }

  IndexDerivs derivs(double y, double u) const override {
    // one exponential: e = exp(-|u|)
    const double e = std::exp(-std::abs(u));
    const double f = u >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
    const double softplus = std::max(u, 0.0) + std::log1p(e);
    const double w = f * (1.0 - f);
    return {y * u - softplus, y - f, -w, -w * (1.0 - 2.0 * f)};
  }
  double log_density(double y, double u) const override {
    return y * u - std::max(u, 0.0) - std::log1p(std::exp(-std::abs(u)));
  }
  double weight(double u) const override {
    const double f = cdf(u);
    return f * (1.0 - f);
  }
  ExpectedMoments expected_moments(double u) const override {
    const double f = cdf(u);
    const double w = f * (1.0 - f);
    return {w, 0.0, -w * (1.0 - 2.0 * f)};
  }
  double mean(double u) const override { return cdf(u); }
  double mean_d1(double u) const override { return weight(u); }
  double mean_d2(double u) const override {
    const double f = cdf(u);
    return f * (1.0 - f) * (1.0 - 2.0 * f);
  }
  double sample(double u, Rng& rng) const override { return rng.uniform() < cdf(u) ? 1.0 : 0.0; }
  double start_index(double m) const override {
    const double p = clip(m, 0.02, 0.98);
    return std::log(p / (1.0 - p));
  }
};

// ---------------------------------------------------------------------------

class ProbitFamily final : public Family {
 public:
  std::string_view name() const override { return "probit"; }
  bool binary_outcome() const override { return true; }
  bool needs_variation() const override { return true; }
  bool in_support(double y) const override { return y == 0.0 || y == 1.0; }

  // Derivatives of log Phi(v).
  struct LogCdf {
    double h, h1, h2, h3;
  };
  // phi(v) / Phi(v); continued fraction in the far left tail where both underflow
  static double mills(double v) {
    if (v > -10.0) return normal_pdf(v) / normal_cdf(v);
    const double a = -v;
    double cf = a;
    for (int k = 40; k >= 1; --k) cf = a + k / cf;
    return cf;
  }
  static LogCdf log_cdf(double v) {
    const double lambda = mills(v);
    const double h = v > -10.0 ? std::log(normal_cdf(v))
                               : -0.5 * v * v - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(lambda);
    const double s = v + lambda;
    return {h, lambda, -lambda * s, lambda * s * (v + 2.0 * lambda) - lambda};
  }

  IndexDerivs derivs(double y, double u) const override {
    if (y == 1.0) {
      const auto d = log_cdf(u);
      return {d.h, d.h1, d.h2, d.h3};
    }
    const auto d = log_cdf(-u);
    return {d.h, -d.h1, d.h2, -d.h3};
  }
  double weight(double u) const override {
    return mills(u) * mills(-u);
  }
  ExpectedMoments expected_moments(double u) const override {
    const double p = normal_cdf(u);
    const auto one = log_cdf(u);
    const auto zero = log_cdf(-u);
    const double eg1g2 = p * one.h1 * one.h2 + (1.0 - p) * (-zero.h1) * zero.h2;
    const double eg3 = p * one.h3 + (1.0 - p) * (-zero.h3);
    return {weight(u), eg1g2, eg3};
  }
  double mean(double u) const override { return normal_cdf(u); }
  double mean_d1(double u) const override { return normal_pdf(u); }
  double mean_d2(double u) const override { return -u * normal_pdf(u); }
  double sample(double u, Rng& rng) const override { return rng.normal() <= u ? 1.0 : 0.0; }
  double start_index(double m) const override { return normal_quantile(clip(m, 0.02, 0.98)); }
};

// ---------------------------------------------------------------------------

class PoissonFamily final : public Family {
 public:
  std::string_view name() const override { return "poisson"; }
  bool needs_variation() const override { return true; }
  bool in_support(double y) const override {
    return y >= 0.0 && std::isfinite(y) && std::floor(y) == y;
  }

  IndexDerivs derivs(double y, double u) const override {
    const double lambda = std::exp(u);
    return {y * u - lambda - std::lgamma(y + 1.0), y - lambda, -lambda, -lambda};
  }
  double weight(double u) const override { return std::exp(u); }
  ExpectedMoments expected_moments(double u) const override {
    const double lambda = std::exp(u);
    return {lambda, 0.0, -lambda};
  }
  double mean(double u) const override { return std::exp(u); }
  double mean_d1(double u) const override { return std::exp(u); }
  double mean_d2(double u) const override { return std::exp(u); }
  double sample(double u, Rng& rng) const override {
    return static_cast<double>(rng.poisson(std::exp(u)));
  }
  double start_index(double m) const override { return std::log(std::max(m, 0.05)); }
};

}  // namespace

FamilyPtr make_family(std::string_view name, double sigma2) {
  if (name == "linear") {
    if (!(sigma2 > 0.0)) throw InputError("linear family needs sigma2 > 0");
    return std::make_shared<LinearFamily>(sigma2);
  }
  if (name == "logit") return std::make_shared<LogitFamily>();
  if (name == "probit") return std::make_shared<ProbitFamily>();
  if (name == "poisson") return std::make_shared<PoissonFamily>();
  throw InputError("unknown family '" + std::string(name) +
                   "' (expected linear, probit, logit or poisson)");
}

IndexDerivs index_derivs(const Family& family, double y, double u) {
  if (!family.in_support(y)) {
    throw InputError("outcome " + std::to_string(y) + " outside the support of the " +
                     std::string(family.name()) + " family");
  }
  return family.derivs(y, u);
}

double expected_weight(const Family& family, double u) {
  return std::max(family.weight(u), kWeightFloor);
}

double simulate_outcome(const Family& family, double u, Rng& rng) {
  return family.sample(u, rng);
}

double partial_effect(const Family& family, const Eigen::Ref<const Eigen::VectorXd>& x,
                      const Eigen::Ref<const Eigen::VectorXd>& beta, double phi,
                      const EffectSpec& spec) {
  const auto k = static_cast<Eigen::Index>(spec.covariate);
  if (k >= beta.size()) throw InputError("partial_effect: covariate index out of range");
  const double index = x.dot(beta) + phi;
  if (spec.mode == EffectSpec::Mode::marginal) return beta(k) * family.mean_d1(index);
  const double rest = index - x(k) * beta(k);
  return family.mean(rest + beta(k) * spec.to) - family.mean(rest + beta(k) * spec.from);
}

EffectGradient partial_effect_gradient(const Family& family,
                                       const Eigen::Ref<const Eigen::VectorXd>& x,
                                       const Eigen::Ref<const Eigen::VectorXd>& beta,
                                       double phi, const EffectSpec& spec) {
  const auto k = static_cast<Eigen::Index>(spec.covariate);
  if (k >= beta.size()) throw InputError("partial_effect: covariate index out of range");
  EffectGradient out;
  const double index = x.dot(beta) + phi;
  if (spec.mode == EffectSpec::Mode::marginal) {
    const double m1 = family.mean_d1(index);
    const double m2 = family.mean_d2(index);
    out.value = beta(k) * m1;
    out.d_phi = beta(k) * m2;
    out.d_beta = beta(k) * m2 * x;
    out.d_beta(k) += m1;
    return out;
  }
  const double rest = index - x(k) * beta(k);
  const double a1 = rest + beta(k) * spec.to;
  const double a0 = rest + beta(k) * spec.from;
  const double d1 = family.mean_d1(a1);
  const double d0 = family.mean_d1(a0);
  out.value = family.mean(a1) - family.mean(a0);
  out.d_phi = d1 - d0;
  out.d_beta = (d1 - d0) * x;
  out.d_beta(k) = d1 * spec.to - d0 * spec.from;
  return out;
}

}  // namespace panelbc
