#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

#include "panelbc/panel_data.hpp"

namespace panelbc {

struct TwoWayOptions {
  enum class Method {
    direct,       // eliminate the larger dimension, dense Cholesky on the smaller
    alternating,  // Gauss-Seidel sweeps over unit blocks then period blocks
  };
  Method method = Method::direct;
  // Orthogonality residuals |sum_{t in D_i} w x~| are required to be at most
  // tol * (sum_{t in D_i} w) * (1 + max|x|), and likewise per period.
  double tol = 1e-10;
  std::size_t max_sweeps = 100000;
  // Above this many columns the dense side switches to alternating sweeps.
  std::size_t max_dense = 1500;
  // Callers that already know the graph is connected may skip the check.
  bool check_connected = true;
};

/// Weighted normal equations of the two-way dummy design,
///
///   A_i a_i + sum_{t in D_i} w_it c_t = r_i      (A_i = sum_{t in D_i} w_it)
///   sum_{i in D_t} w_it a_i + C_t c_t = s_t      (C_t = sum_{i in D_t} w_it)
///
/// factored once for a fixed weight vector. The system is singular along
/// (a + k, c - k); solutions are returned with sum_t c_t = 0 and must be
/// renormalized by the caller if another convention is wanted. The unit-period
/// graph must be connected.
class TwoWaySolver {
 public:
  TwoWaySolver(const PanelIndex& index, Eigen::VectorXd weights, TwoWayOptions opts = {});

  void solve(const Eigen::VectorXd& unit_rhs, const Eigen::VectorXd& period_rhs,
             Eigen::VectorXd& unit_effect, Eigen::VectorXd& period_effect) const;

  // x~ = x + kappa_i + rho_t with (kappa, rho) the weighted least-squares fit
  // of -x on the dummies. Optionally returns kappa (N x d) and rho (T x d).
  Eigen::MatrixXd project(const Eigen::MatrixXd& x, Eigen::MatrixXd* kappa = nullptr,
                          Eigen::MatrixXd* rho = nullptr) const;

  const Eigen::VectorXd& weights() const { return w_; }
  const Eigen::VectorXd& unit_totals() const { return unit_total_; }
  const Eigen::VectorXd& period_totals() const { return period_total_; }
  bool uses_direct() const { return direct_; }

 private:
  void solve_direct(const Eigen::VectorXd& r, const Eigen::VectorXd& s, Eigen::VectorXd& a,
                    Eigen::VectorXd& c) const;
  void solve_alternating(const Eigen::VectorXd& r, const Eigen::VectorXd& s, Eigen::VectorXd& a,
                         Eigen::VectorXd& c) const;

  const PanelIndex* index_;
  Eigen::VectorXd w_;
  TwoWayOptions opts_;
  Eigen::VectorXd unit_total_;
  Eigen::VectorXd period_total_;
  bool direct_ = true;
  bool eliminate_units_ = true;  // dense side is periods
  Eigen::LLT<Eigen::MatrixXd> factor_;
};

/// Weighted two-way projection of the columns of x. Checks connectivity and
/// throws ValidationError naming the components when the graph is split.
Eigen::MatrixXd two_way_project(const Eigen::MatrixXd& x, const Eigen::VectorXd& weights,
                                const PanelIndex& index, const TwoWayOptions& opts = {});

/// Largest relative orthogonality residual of x~ (see TwoWayOptions::tol).
double orthogonality_residual(const Eigen::MatrixXd& xtilde, const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& weights, const PanelIndex& index);

}  // namespace panelbc
