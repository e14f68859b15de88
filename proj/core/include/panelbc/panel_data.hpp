#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace panelbc {

class Family;

enum class CovariateKind { continuous, binary };

// Original labels of the dense unit and period ids.
struct IdMap {
  std::vector<std::string> unit_labels;
  std::vector<std::string> period_labels;
};

/// Panel of observations (y_it, x_it) over an arbitrary observed set D of
/// (unit, period) pairs. Ids are dense and zero-based; rows are kept sorted by
/// (unit, period). Immutable after construction.
class PanelData {
 public:
  PanelData(std::size_t units, std::size_t periods, std::vector<std::size_t> unit,
            std::vector<std::size_t> period, Eigen::VectorXd y, Eigen::MatrixXd x,
            std::vector<std::string> covariate_names,
            std::vector<CovariateKind> covariate_kinds, IdMap ids = {});

  std::size_t units() const { return units_; }
  std::size_t periods() const { return periods_; }
  std::size_t size() const { return unit_.size(); }
  std::size_t num_covariates() const { return static_cast<std::size_t>(x_.cols()); }

  const std::vector<std::size_t>& unit() const { return unit_; }
  const std::vector<std::size_t>& period() const { return period_; }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::MatrixXd& x() const { return x_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const std::vector<CovariateKind>& covariate_kinds() const { return kinds_; }
  const IdMap& ids() const { return ids_; }

  std::optional<std::size_t> covariate_index(std::string_view name) const;

  bool balanced() const { return size() == units_ * periods_; }

 private:
  std::size_t units_;
  std::size_t periods_;
  std::vector<std::size_t> unit_;
  std::vector<std::size_t> period_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::vector<std::string> names_;
  std::vector<CovariateKind> kinds_;
  IdMap ids_;
};

/// Observation-set bookkeeping: D, D_i, D_t and the average counts.
struct PanelIndex {
  std::size_t units = 0;
  std::size_t periods = 0;
  std::size_t n = 0;
  std::vector<std::size_t> unit;    // unit of each row
  std::vector<std::size_t> period;  // period of each row
  std::vector<std::vector<std::size_t>> unit_rows;    // rows of D_i, ordered by period
  std::vector<std::vector<std::size_t>> period_rows;  // rows of D_t, ordered by unit
  double tbar = 0.0;  // n / N
  double nbar = 0.0;  // n / T

  std::size_t unit_count(std::size_t i) const { return unit_rows[i].size(); }
  std::size_t period_count(std::size_t t) const { return period_rows[t].size(); }
  bool balanced() const { return n == units * periods; }
};

PanelIndex build_index(const PanelData& data);

// Connected components of the unit-period incidence graph. Returns, for every
// unit, a component label; periods share labels with their units.
struct Components {
  std::size_t count = 0;
  std::vector<std::size_t> unit_component;
  std::vector<std::size_t> period_component;
};
Components connected_components(const PanelIndex& index);
std::string describe_components(const Components& components, const IdMap& ids);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::string unit_column = "unit";
  std::string period_column = "period";
  std::string outcome_column = "y";
  // Empty means every other column.
  std::vector<std::string> covariates;
  // Covariates forced to a kind; others are inferred (0/1 only -> binary).
  std::vector<std::pair<std::string, CovariateKind>> kinds;
};

PanelData load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
PanelData parse_csv(std::string_view text, const CsvSchema& schema = {});
std::string to_csv(const PanelData& data);
void write_csv(const PanelData& data, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct ValidateOptions {
  std::size_t min_obs = 2;
  double collinearity_tol = 1e-10;
};

struct Diagnostic {
  enum class Kind { too_few_obs, no_variation, collinear, disconnected } kind;
  enum class Scope { unit, period, covariate } scope;
  std::size_t id;  // dense unit/period id or covariate index
  std::string message;
};

struct ValidationReport {
  std::vector<Diagnostic> diagnostics;
  std::vector<std::size_t> drop_units;
  std::vector<std::size_t> drop_periods;
  std::vector<std::size_t> collinear_covariates;

  bool clean() const { return diagnostics.empty(); }
};

// Binary outcomes that never change, or counts that are all zero, over `rows`:
// the corresponding fixed effect has no finite estimate.
bool no_outcome_variation(const Family& family, const Eigen::VectorXd& y,
                          const std::vector<std::size_t>& rows);

ValidationReport validate(const PanelData& data, const Family& family,
                          const ValidateOptions& opts = {});

// Removes the units and periods listed in the report (explicit, caller driven).
PanelData drop(const PanelData& data, std::span<const std::size_t> units,
               std::span<const std::size_t> periods);

// Repeatedly validates and drops degenerate units/periods until the panel is
// clean of outcome-variation problems. Returns the cleaned panel and the number
// of dropped units and periods. Collinearity is not repaired.
struct CleanResult;
CleanResult drop_degenerate(const PanelData& data, const Family& family,
                            const ValidateOptions& opts = {});

// ---------------------------------------------------------------------------
// Subpanels
// ---------------------------------------------------------------------------

struct SplitScheme {
  enum class Kind { leave_unit_out, leave_period_out, unit_subset, period_first_half,
                    period_second_half };
  Kind kind;
  std::size_t which = 0;                  // leave-one-out id
  std::vector<std::size_t> members;       // unit_subset members

  static SplitScheme leave_unit_out(std::size_t i) { return {Kind::leave_unit_out, i, {}}; }
  static SplitScheme leave_period_out(std::size_t t) { return {Kind::leave_period_out, t, {}}; }
  static SplitScheme units(std::vector<std::size_t> m) { return {Kind::unit_subset, 0, std::move(m)}; }
  static SplitScheme first_half() { return {Kind::period_first_half, 0, {}}; }
  static SplitScheme second_half() { return {Kind::period_second_half, 0, {}}; }
};

// Period halves {t <= ceil(T/2)} and {t >= floor(T/2 + 1)} in one-based terms.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> period_halves(std::size_t periods);

// A subpanel keeps the original dense ids of its rows so that results can be
// mapped back to the parent.
struct Subpanel {
  PanelData data;
  std::vector<std::size_t> parent_unit;    // new unit id -> parent unit id
  std::vector<std::size_t> parent_period;  // new period id -> parent period id
};

Subpanel subpanel(const PanelData& data, const SplitScheme& scheme);
Subpanel restrict(const PanelData& data, std::span<const std::size_t> units,
                  std::span<const std::size_t> periods);

struct CleanResult {
  Subpanel panel;
  std::size_t dropped_units = 0;
  std::size_t dropped_periods = 0;
};

// Adds a lag-k copy of `column` ("y" for the outcome, otherwise a covariate
// name) as a new covariate named `<column>_lag<k>`. Rows whose lag is not in
// D_i are removed.
PanelData derive_lags(const PanelData& data, std::string_view column, std::size_t k);

}  // namespace panelbc
