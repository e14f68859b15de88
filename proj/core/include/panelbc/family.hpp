#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <string_view>

#include "panelbc/rng.hpp"

namespace panelbc {

/// Log-density g(y, u) at index u and its first three u-derivatives.
struct IndexDerivs {
  double g = 0.0;
  double g1 = 0.0;
  double g2 = 0.0;
  double g3 = 0.0;
};

/// Model expectations at index u: the information weight w = -E[g2],
/// E[g1 g2] and E[g3].
struct ExpectedMoments {
  double weight = 0.0;
  double score_hessian = 0.0;
  double third = 0.0;
};

inline constexpr double kWeightFloor = 1e-10;

/// Single-index likelihood family. A new family implements this interface and
/// nothing else in the library needs to change.
class Family {
 public:
  virtual ~Family() = default;

  virtual std::string_view name() const = 0;

  // True for families whose outcome is 0/1.
  virtual bool binary_outcome() const { return false; }
  // True when an outcome-constant unit/period drives its effect to infinity.
  virtual bool needs_variation() const { return false; }
  // Linear family: the scale is concentrated out after fitting the index.
  virtual bool has_dispersion() const { return false; }

  virtual bool in_support(double y) const = 0;

  // No support check; callers on hot paths validate once up front.
  virtual IndexDerivs derivs(double y, double u) const = 0;
  virtual double log_density(double y, double u) const { return derivs(y, u).g; }

  virtual double weight(double u) const = 0;
  virtual ExpectedMoments expected_moments(double u) const = 0;

  // Conditional mean m(u) = E[y | u] and its derivatives.
  virtual double mean(double u) const = 0;
  virtual double mean_d1(double u) const = 0;
  virtual double mean_d2(double u) const = 0;

  virtual double sample(double u, Rng& rng) const = 0;

  // Index whose conditional mean matches a (clipped) outcome average.
  virtual double start_index(double mean_outcome) const = 0;
};

using FamilyPtr = std::shared_ptr<const Family>;

/// Families by CLI name: linear, probit, logit, poisson. `sigma2` only affects
/// the linear family (simulation noise and derivative scaling).
FamilyPtr make_family(std::string_view name, double sigma2 = 1.0);

/// Analytic derivatives after checking that y is in the family's support.
IndexDerivs index_derivs(const Family& family, double y, double u);

/// Expected information weight, floored at kWeightFloor.
double expected_weight(const Family& family, double u);

double simulate_outcome(const Family& family, double u, Rng& rng);

// ---------------------------------------------------------------------------
// Partial effects
// ---------------------------------------------------------------------------

struct EffectSpec {
  enum class Mode { discrete, marginal };
  std::size_t covariate = 0;
  Mode mode = Mode::marginal;
  double from = 0.0;  // discrete only
  double to = 1.0;
};

// Effect of covariate k on E[y | x, phi] where phi = alpha_i + gamma_t.
double partial_effect(const Family& family, const Eigen::Ref<const Eigen::VectorXd>& x,
                      const Eigen::Ref<const Eigen::VectorXd>& beta, double phi,
                      const EffectSpec& spec);

// Derivatives of the partial effect with respect to the index shift phi and to
// beta (holding phi fixed). Used by the delta method.
struct EffectGradient {
  double value = 0.0;
  double d_phi = 0.0;
  Eigen::VectorXd d_beta;
};
EffectGradient partial_effect_gradient(const Family& family,
                                       const Eigen::Ref<const Eigen::VectorXd>& x,
                                       const Eigen::Ref<const Eigen::VectorXd>& beta,
                                       double phi, const EffectSpec& spec);

// Standard normal helpers shared with the simulation oracles.
double normal_cdf(double z);
double normal_pdf(double z);
double normal_quantile(double p);

}  // namespace panelbc
