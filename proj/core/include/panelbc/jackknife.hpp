#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "panelbc/bias.hpp"

namespace panelbc {

struct JackknifeOptions {
  std::size_t splits = 50;  // random unit partitions for SBC
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  // Subpanels of binary or count outcomes can contain units or periods without
  // outcome variation. `error` stops; `drop` removes them inside that subpanel
  // and records the counts.
  enum class OnDegenerate { error, drop } on_degenerate = OnDegenerate::error;
  SolveOptions solve;
};

// Any vector-valued function of a (sub)panel and its fit; the jackknife
// combinations are applied elementwise.
using Statistic = std::function<Eigen::VectorXd(const PanelData&, const FitResult&)>;

struct JackknifeRequest {
  bool jbc = false;
  bool sbc = false;
  bool hbc = false;
};

struct JackknifeResult {
  Eigen::VectorXd full;
  Eigen::VectorXd jbc, sbc, hbc;  // empty unless requested
  std::vector<SubEstimate> subestimates;  // statistic values per subpanel
};

// Runs every subpanel fit the requested corrections need (each only once),
// warm-started from `full_fit`, and combines:
//   JBC = (N+T-1) s - (N-1) mean_i s(-i) - (T-1) mean_t s(-t)
//   SBC = 3 s - mean_splits (s_A + s_B)/2 - (s_first + s_second)/2
//   HBC = (N+1) s - (N-1) mean_i s(-i) - (s_first + s_second)/2
JackknifeResult jackknife(const PanelData& data, const Family& family, const FitResult& full_fit,
                          const Statistic& statistic, const JackknifeRequest& request,
                          const JackknifeOptions& opts = {});

// The displayed affine combinations, exposed for property tests.
Eigen::VectorXd jbc_combine(const Eigen::VectorXd& full, const Eigen::VectorXd& unit_mean,
                            const Eigen::VectorXd& period_mean, std::size_t units,
                            std::size_t periods);
Eigen::VectorXd sbc_combine(const Eigen::VectorXd& full, const Eigen::VectorXd& unit_half_mean,
                            const Eigen::VectorXd& period_half_mean);
Eigen::VectorXd hbc_combine(const Eigen::VectorXd& full, const Eigen::VectorXd& unit_mean,
                            const Eigen::VectorXd& period_half_mean, std::size_t units);

// Random partition of 0..N-1 into sets of sizes ceil(N/2) and floor(N/2).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> unit_halves(std::size_t units,
                                                                          Rng& rng);

CorrectedEstimate jbc(const PanelData& data, const Family& family, const FitResult& fe,
                      const JackknifeOptions& opts = {});
CorrectedEstimate sbc(const PanelData& data, const Family& family, const FitResult& fe,
                      const JackknifeOptions& opts = {});
CorrectedEstimate hbc(const PanelData& data, const Family& family, const FitResult& fe,
                      const JackknifeOptions& opts = {});

// Runs `fn(k)` for k in [0, count) on up to `workers` threads. Exceptions are
// rethrown (the one with the smallest k) after all threads finish.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace panelbc
