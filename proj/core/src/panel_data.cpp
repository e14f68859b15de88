#include "panelbc/panel_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "panelbc/error.hpp"
#include "panelbc/family.hpp"
#include "panelbc/two_way.hpp"

namespace panelbc {

// ---------------------------------------------------------------------------
// PanelData
// ---------------------------------------------------------------------------

PanelData::PanelData(std::size_t units, std::size_t periods, std::vector<std::size_t> unit,
                     std::vector<std::size_t> period, Eigen::VectorXd y, Eigen::MatrixXd x,
                     std::vector<std::string> covariate_names,
                     std::vector<CovariateKind> covariate_kinds, IdMap ids)
    : units_(units), periods_(periods), names_(std::move(covariate_names)),
      kinds_(std::move(covariate_kinds)), ids_(std::move(ids)) {
  const std::size_t n = unit.size();
  if (n == 0) throw ValidationError("panel has no observations");
  if (period.size() != n || static_cast<std::size_t>(y.size()) != n ||
      static_cast<std::size_t>(x.rows()) != n) {
    throw InputError("panel columns have different lengths");
  }
  if (names_.size() != static_cast<std::size_t>(x.cols()) || kinds_.size() != names_.size()) {
    throw InputError("covariate names/kinds do not match the covariate matrix");
  }
  if (x.cols() == 0) throw InputError("panel needs at least one covariate");

  std::vector<char> seen_unit(units, false), seen_period(periods, false);
  for (std::size_t r = 0; r < n; ++r) {
    if (unit[r] >= units || period[r] >= periods) throw InputError("unit/period id out of range");
    seen_unit[unit[r]] = true;
    seen_period[period[r]] = true;
  }
  if (std::find(seen_unit.begin(), seen_unit.end(), 0) != seen_unit.end() ||
      std::find(seen_period.begin(), seen_period.end(), 0) != seen_period.end()) {
    throw InputError("unit and period ids must be dense (every id observed at least once)");
  }

  const auto label = [&](const std::vector<std::string>& labels, std::size_t id) {
    return id < labels.size() ? labels[id] : std::to_string(id + 1);
  };
  const auto before = [&](std::size_t a, std::size_t b) {
    return unit[a] != unit[b] ? unit[a] < unit[b] : period[a] < period[b];
  };
  bool sorted = true;
  for (std::size_t r = 1; r < n && sorted; ++r) sorted = before(r - 1, r);
  if (sorted) {
    // strictly increasing (unit, period): no duplicates, keep the storage
    unit_ = std::move(unit);
    period_ = std::move(period);
    y_ = std::move(y);
    x_ = std::move(x);
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), before);
    unit_.resize(n);
    period_.resize(n);
    y_.resize(static_cast<Eigen::Index>(n));
    x_.resize(static_cast<Eigen::Index>(n), x.cols());
    for (std::size_t r = 0; r < n; ++r) {
      const auto src = static_cast<Eigen::Index>(order[r]);
      unit_[r] = unit[order[r]];
      period_[r] = period[order[r]];
      y_(static_cast<Eigen::Index>(r)) = y(src);
      x_.row(static_cast<Eigen::Index>(r)) = x.row(src);
      if (r > 0 && unit_[r] == unit_[r - 1] && period_[r] == period_[r - 1]) {
        throw InputError("duplicate observation for unit " + label(ids_.unit_labels, unit_[r]) +
                         ", period " + label(ids_.period_labels, period_[r]));
      }
    }
  }
  if (!y_.allFinite() || !x_.allFinite()) throw InputError("panel contains non-finite values");
  for (Eigen::Index k = 0; k < x_.cols(); ++k) {
    if ((x_.col(k).array() == x_(0, k)).all()) {
      throw ValidationError("covariate '" + names_[static_cast<std::size_t>(k)] +
                            "' is constant; constants are absorbed by the fixed effects");
    }
  }
  if (ids_.unit_labels.empty()) {
    for (std::size_t i = 0; i < units; ++i) ids_.unit_labels.push_back(std::to_string(i + 1));
  }
  if (ids_.period_labels.empty()) {
    for (std::size_t t = 0; t < periods; ++t) ids_.period_labels.push_back(std::to_string(t + 1));
  }
  if (ids_.unit_labels.size() != units || ids_.period_labels.size() != periods) {
    throw InputError("id map does not match panel dimensions");
  }
}

std::optional<std::size_t> PanelData::covariate_index(std::string_view name) const {
  for (std::size_t k = 0; k < names_.size(); ++k) {
    if (names_[k] == name) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

PanelIndex build_index(const PanelData& data) {
  PanelIndex idx;
  idx.units = data.units();
  idx.periods = data.periods();
  idx.n = data.size();
  idx.unit = data.unit();
  idx.period = data.period();
  idx.unit_rows.assign(idx.units, {});
  idx.period_rows.assign(idx.periods, {});
  {
    std::vector<std::size_t> nu(idx.units, 0), np(idx.periods, 0);
    for (std::size_t r = 0; r < idx.n; ++r) {
      ++nu[idx.unit[r]];
      ++np[idx.period[r]];
    }
    for (std::size_t i = 0; i < idx.units; ++i) idx.unit_rows[i].reserve(nu[i]);
    for (std::size_t t = 0; t < idx.periods; ++t) idx.period_rows[t].reserve(np[t]);
  }
  // rows are sorted by (unit, period), so both lists come out ordered
  for (std::size_t r = 0; r < idx.n; ++r) {
    idx.unit_rows[idx.unit[r]].push_back(r);
    idx.period_rows[idx.period[r]].push_back(r);
  }
  idx.tbar = static_cast<double>(idx.n) / static_cast<double>(idx.units);
  idx.nbar = static_cast<double>(idx.n) / static_cast<double>(idx.periods);
  return idx;
}

Components connected_components(const PanelIndex& index) {
  // union-find over units (0..N-1) and periods (N..N+T-1)
  const std::size_t total = index.units + index.periods;
  std::vector<std::size_t> parent(total);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  for (std::size_t r = 0; r < index.n; ++r) {
    const std::size_t a = find(index.unit[r]);
    const std::size_t b = find(index.units + index.period[r]);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  Components c;
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> label(total, unset);
  c.unit_component.resize(index.units);
  c.period_component.resize(index.periods);
  for (std::size_t v = 0; v < total; ++v) {
    const std::size_t root = find(v);
    if (label[root] == unset) label[root] = c.count++;
    if (v < index.units) {
      c.unit_component[v] = label[root];
    } else {
      c.period_component[v - index.units] = label[root];
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == ',' && !quoted)) {
      fields.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return fields;
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

std::optional<long long> parse_integer(std::string_view s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

// Dense ids in natural order: numeric when every label is an integer.
std::pair<std::vector<std::size_t>, std::vector<std::string>> densify(
    const std::vector<std::string>& labels) {
  std::vector<std::string> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const bool numeric = std::all_of(distinct.begin(), distinct.end(),
                                   [](const std::string& s) { return parse_integer(s).has_value(); });
  if (numeric) {
    std::sort(distinct.begin(), distinct.end(), [](const std::string& a, const std::string& b) {
      return *parse_integer(a) < *parse_integer(b);
    });
  }
  std::unordered_map<std::string, std::size_t> id;
  for (std::size_t k = 0; k < distinct.size(); ++k) id.emplace(distinct[k], k);
  std::vector<std::size_t> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) out[r] = id.at(labels[r]);
  return {out, distinct};
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

PanelData parse_csv(std::string_view text, const CsvSchema& schema) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::vector<std::size_t> line_of_row;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = nl + 1;
    if (trim(line).empty()) {
      if (nl == text.size()) break;
      continue;
    }
    if (header.empty()) {
      header = split_line(line);
    } else {
      rows.push_back(split_line(line));
      line_of_row.push_back(line_no);
    }
    if (nl == text.size()) break;
  }
  if (header.empty()) throw InputError("CSV input is empty");
  if (rows.empty()) throw InputError("CSV input has a header but no data rows");

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("CSV is missing required column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t unit_col = column(schema.unit_column);
  const std::size_t period_col = column(schema.period_column);
  const std::size_t y_col = column(schema.outcome_column);

  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != unit_col && c != period_col && c != y_col) cov_names.push_back(header[c]);
    }
  }
  std::vector<std::size_t> cov_cols;
  for (const auto& name : cov_names) cov_cols.push_back(column(name));

  const std::size_t n = rows.size();
  std::vector<std::string> unit_labels(n), period_labels(n);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cov_cols.size()));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& f = rows[r];
    if (f.size() != header.size()) {
      throw InputError("CSV line " + std::to_string(line_of_row[r]) + " has " +
                       std::to_string(f.size()) + " fields, expected " +
                       std::to_string(header.size()));
    }
    unit_labels[r] = f[unit_col];
    period_labels[r] = f[period_col];
    auto number = [&](std::size_t c) {
      auto v = parse_double(f[c]);
      if (!v) {
        throw InputError("CSV line " + std::to_string(line_of_row[r]) + ": non-numeric value '" +
                         f[c] + "' in column '" + header[c] + "'");
      }
      return *v;
    };
    y(static_cast<Eigen::Index>(r)) = number(y_col);
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = number(cov_cols[k]);
    }
  }

  auto [unit_ids, unit_map] = densify(unit_labels);
  auto [period_ids, period_map] = densify(period_labels);

  std::vector<CovariateKind> kinds;
  for (std::size_t k = 0; k < cov_names.size(); ++k) {
    const auto col = x.col(static_cast<Eigen::Index>(k)).array();
    CovariateKind kind = ((col == 0.0) || (col == 1.0)).all() ? CovariateKind::binary
                                                              : CovariateKind::continuous;
    for (const auto& [name, forced] : schema.kinds) {
      if (name == cov_names[k]) kind = forced;
    }
    if (kind == CovariateKind::binary && !((col == 0.0) || (col == 1.0)).all()) {
      throw InputError("covariate '" + cov_names[k] + "' declared binary but has non 0/1 values");
    }
    kinds.push_back(kind);
  }

  // sizes first: argument evaluation order is unspecified
  const std::size_t units = unit_map.size(), periods = period_map.size();
  return PanelData(units, periods, std::move(unit_ids), std::move(period_ids),
                   std::move(y), std::move(x), std::move(cov_names), std::move(kinds),
                   IdMap{std::move(unit_map), std::move(period_map)});
}

PanelData load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open data file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

std::string to_csv(const PanelData& data) {
  std::ostringstream out;
  out << "unit,period,y";
  for (const auto& name : data.covariate_names()) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out << data.ids().unit_labels[data.unit()[r]] << ',' << data.ids().period_labels[data.period()[r]]
        << ',' << format_double(data.y()(row));
    for (Eigen::Index k = 0; k < data.x().cols(); ++k) out << ',' << format_double(data.x()(row, k));
    out << '\n';
  }
  return out.str();
}

void write_csv(const PanelData& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << to_csv(data);
}

// ---------------------------------------------------------------------------
// Subpanels
// ---------------------------------------------------------------------------

Subpanel restrict(const PanelData& data, std::span<const std::size_t> units,
                  std::span<const std::size_t> periods) {
  std::vector<char> keep_unit(data.units(), false), keep_period(data.periods(), false);
  for (auto i : units) {
    if (i >= data.units()) throw InputError("subpanel unit id out of range");
    keep_unit[i] = true;
  }
  for (auto t : periods) {
    if (t >= data.periods()) throw InputError("subpanel period id out of range");
    keep_period[t] = true;
  }
  std::vector<std::size_t> rows;
  rows.reserve(data.size());
  std::vector<char> unit_present(data.units(), false), period_present(data.periods(), false);
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (keep_unit[data.unit()[r]] && keep_period[data.period()[r]]) {
      rows.push_back(r);
      unit_present[data.unit()[r]] = true;
      period_present[data.period()[r]] = true;
    }
  }
  if (rows.empty()) throw ValidationError("subpanel is empty");

  std::vector<std::size_t> parent_unit, parent_period;
  std::vector<std::size_t> new_unit(data.units(), 0), new_period(data.periods(), 0);
  IdMap ids;
  for (std::size_t i = 0; i < data.units(); ++i) {
    if (unit_present[i]) {
      new_unit[i] = parent_unit.size();
      parent_unit.push_back(i);
      ids.unit_labels.push_back(data.ids().unit_labels[i]);
    }
  }
  for (std::size_t t = 0; t < data.periods(); ++t) {
    if (period_present[t]) {
      new_period[t] = parent_period.size();
      parent_period.push_back(t);
      ids.period_labels.push_back(data.ids().period_labels[t]);
    }
  }
  std::vector<std::size_t> u(rows.size()), p(rows.size());
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), data.x().cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = rows[k];
    u[k] = new_unit[data.unit()[r]];
    p[k] = new_period[data.period()[r]];
    y(static_cast<Eigen::Index>(k)) = data.y()(static_cast<Eigen::Index>(r));
    x.row(static_cast<Eigen::Index>(k)) = data.x().row(static_cast<Eigen::Index>(r));
  }
  PanelData sub(parent_unit.size(), parent_period.size(), std::move(u), std::move(p), std::move(y),
                std::move(x), data.covariate_names(), data.covariate_kinds(), std::move(ids));
  return Subpanel{std::move(sub), std::move(parent_unit), std::move(parent_period)};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> period_halves(std::size_t periods) {
  // one-based: first = {t <= ceil(T/2)}, second = {t >= floor(T/2 + 1)}
  const std::size_t first_last = (periods + 1) / 2;  // ceil(T/2)
  const std::size_t second_first = periods / 2 + 1;  // floor(T/2 + 1)
  std::vector<std::size_t> a, b;
  for (std::size_t t = 1; t <= periods; ++t) {
    if (t <= first_last) a.push_back(t - 1);
    if (t >= second_first) b.push_back(t - 1);
  }
  return {a, b};
}

Subpanel subpanel(const PanelData& data, const SplitScheme& scheme) {
  std::vector<std::size_t> all_units(data.units()), all_periods(data.periods());
  std::iota(all_units.begin(), all_units.end(), 0);
  std::iota(all_periods.begin(), all_periods.end(), 0);
  switch (scheme.kind) {
    case SplitScheme::Kind::leave_unit_out: {
      if (scheme.which >= data.units()) throw InputError("leave_unit_out: unit out of range");
      all_units.erase(all_units.begin() + static_cast<std::ptrdiff_t>(scheme.which));
      return restrict(data, all_units, all_periods);
    }
    case SplitScheme::Kind::leave_period_out: {
      if (scheme.which >= data.periods()) throw InputError("leave_period_out: period out of range");
      all_periods.erase(all_periods.begin() + static_cast<std::ptrdiff_t>(scheme.which));
      return restrict(data, all_units, all_periods);
    }
    case SplitScheme::Kind::unit_subset:
      if (scheme.members.empty()) throw ValidationError("unit subset is empty");
      return restrict(data, scheme.members, all_periods);
    case SplitScheme::Kind::period_first_half:
      return restrict(data, all_units, period_halves(data.periods()).first);
    case SplitScheme::Kind::period_second_half:
      return restrict(data, all_units, period_halves(data.periods()).second);
  }
  throw InputError("unknown split scheme");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

// Outcome pattern that sends a fixed effect to +-infinity.
}  // namespace

bool no_outcome_variation(const Family& family, const Eigen::VectorXd& y,
                         const std::vector<std::size_t>& rows) {
  if (!family.needs_variation() || rows.empty()) return false;
  if (family.binary_outcome()) {
    const double first = y(static_cast<Eigen::Index>(rows.front()));
    return std::all_of(rows.begin(), rows.end(),
                       [&](std::size_t r) { return y(static_cast<Eigen::Index>(r)) == first; });
  }
  return std::all_of(rows.begin(), rows.end(),
                     [&](std::size_t r) { return y(static_cast<Eigen::Index>(r)) == 0.0; });
}

ValidationReport validate(const PanelData& data, const Family& family,
                          const ValidateOptions& opts) {
  ValidationReport report;
  const PanelIndex idx = build_index(data);
  const auto& labels = data.ids();
  std::set<std::size_t> drop_units, drop_periods;

  for (std::size_t r = 0; r < data.size(); ++r) {
    const double y = data.y()(static_cast<Eigen::Index>(r));
    if (!family.in_support(y)) {
      throw InputError("outcome value " + format_double(y) + " outside the support of the " +
                       std::string(family.name()) + " family");
    }
  }

  for (std::size_t i = 0; i < idx.units; ++i) {
    if (idx.unit_count(i) < opts.min_obs) {
      report.diagnostics.push_back({Diagnostic::Kind::too_few_obs, Diagnostic::Scope::unit, i,
                                    "unit " + labels.unit_labels[i] + " has " +
                                        std::to_string(idx.unit_count(i)) + " observation(s), drop"});
      drop_units.insert(i);
    } else if (no_outcome_variation(family, data.y(), idx.unit_rows[i])) {
      report.diagnostics.push_back({Diagnostic::Kind::no_variation, Diagnostic::Scope::unit, i,
                                    "unit " + labels.unit_labels[i] + " has no outcome variation, drop"});
      drop_units.insert(i);
    }
  }
  for (std::size_t t = 0; t < idx.periods; ++t) {
    if (idx.period_count(t) < opts.min_obs) {
      report.diagnostics.push_back({Diagnostic::Kind::too_few_obs, Diagnostic::Scope::period, t,
                                    "period " + labels.period_labels[t] + " has " +
                                        std::to_string(idx.period_count(t)) +
                                        " observation(s), drop"});
      drop_periods.insert(t);
    } else if (no_outcome_variation(family, data.y(), idx.period_rows[t])) {
      report.diagnostics.push_back({Diagnostic::Kind::no_variation, Diagnostic::Scope::period, t,
                                    "period " + labels.period_labels[t] +
                                        " has no outcome variation, drop"});
      drop_periods.insert(t);
    }
  }

  const Components comps = connected_components(idx);
  if (comps.count > 1) {
    report.diagnostics.push_back({Diagnostic::Kind::disconnected, Diagnostic::Scope::unit, 0,
                                  describe_components(comps, labels)});
  } else {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(idx.n));
    TwoWayOptions two_way;
    const Eigen::MatrixXd xt = two_way_project(data.x(), ones, idx, two_way);
    for (Eigen::Index k = 0; k < data.x().cols(); ++k) {
      const auto col = data.x().col(k);
      const double spread = (col.array() - col.mean()).matrix().squaredNorm();
      if (xt.col(k).squaredNorm() <= opts.collinearity_tol * std::max(1.0, spread)) {
        const auto kk = static_cast<std::size_t>(k);
        report.diagnostics.push_back({Diagnostic::Kind::collinear, Diagnostic::Scope::covariate, kk,
                                      "covariate '" + data.covariate_names()[kk] +
                                          "' lies in the span of the unit and period dummies"});
        report.collinear_covariates.push_back(kk);
      }
    }
  }
  report.drop_units.assign(drop_units.begin(), drop_units.end());
  report.drop_periods.assign(drop_periods.begin(), drop_periods.end());
  return report;
}

PanelData drop(const PanelData& data, std::span<const std::size_t> units,
               std::span<const std::size_t> periods) {
  std::vector<char> gone_u(data.units(), false), gone_t(data.periods(), false);
  for (auto i : units) gone_u.at(i) = true;
  for (auto t : periods) gone_t.at(t) = true;
  std::vector<std::size_t> keep_u, keep_t;
  for (std::size_t i = 0; i < data.units(); ++i) if (!gone_u[i]) keep_u.push_back(i);
  for (std::size_t t = 0; t < data.periods(); ++t) if (!gone_t[t]) keep_t.push_back(t);
  return restrict(data, keep_u, keep_t).data;
}

CleanResult drop_degenerate(const PanelData& data, const Family& family,
                            const ValidateOptions& opts) {
  CleanResult out{.panel = {data, {}, {}}};
  out.panel.parent_unit.resize(data.units());
  out.panel.parent_period.resize(data.periods());
  std::iota(out.panel.parent_unit.begin(), out.panel.parent_unit.end(), 0);
  std::iota(out.panel.parent_period.begin(), out.panel.parent_period.end(), 0);
  if (!family.needs_variation() && opts.min_obs <= 1) return out;

  for (;;) {
    const PanelIndex idx = build_index(out.panel.data);
    std::vector<std::size_t> bad_u, bad_t;
    for (std::size_t i = 0; i < idx.units; ++i) {
      if (idx.unit_count(i) < opts.min_obs ||
          no_outcome_variation(family, out.panel.data.y(), idx.unit_rows[i])) {
        bad_u.push_back(i);
      }
    }
    for (std::size_t t = 0; t < idx.periods; ++t) {
      if (idx.period_count(t) < opts.min_obs ||
          no_outcome_variation(family, out.panel.data.y(), idx.period_rows[t])) {
        bad_t.push_back(t);
      }
    }
    if (bad_u.empty() && bad_t.empty()) return out;
    out.dropped_units += bad_u.size();
    out.dropped_periods += bad_t.size();
    std::vector<char> gone_u(idx.units, false), gone_t(idx.periods, false);
    for (auto i : bad_u) gone_u[i] = true;
    for (auto t : bad_t) gone_t[t] = true;
    std::vector<std::size_t> keep_u, keep_t;
    for (std::size_t i = 0; i < idx.units; ++i) if (!gone_u[i]) keep_u.push_back(i);
    for (std::size_t t = 0; t < idx.periods; ++t) if (!gone_t[t]) keep_t.push_back(t);
    Subpanel next = restrict(out.panel.data, keep_u, keep_t);
    for (auto& u : next.parent_unit) u = out.panel.parent_unit[u];
    for (auto& t : next.parent_period) t = out.panel.parent_period[t];
    out.panel = std::move(next);
  }
}

// ---------------------------------------------------------------------------
// Lags
// ---------------------------------------------------------------------------

PanelData derive_lags(const PanelData& data, std::string_view column, std::size_t k) {
  if (k < 1) throw InputError("lag order must be at least 1");
  const PanelIndex idx = build_index(data);
  std::size_t longest = 0;
  for (std::size_t i = 0; i < idx.units; ++i) longest = std::max(longest, idx.unit_count(i));
  if (k >= longest) throw InputError("lag order " + std::to_string(k) + " leaves no usable rows");

  Eigen::VectorXd source;
  if (column == "y") {
    source = data.y();
  } else if (auto c = data.covariate_index(column)) {
    source = data.x().col(static_cast<Eigen::Index>(*c));
  } else {
    throw InputError("derive_lags: unknown column '" + std::string(column) + "'");
  }

  std::vector<std::size_t> rows;
  std::vector<double> lagged;
  for (std::size_t i = 0; i < idx.units; ++i) {
    std::unordered_map<std::size_t, std::size_t> row_at;
    for (auto r : idx.unit_rows[i]) row_at.emplace(data.period()[r], r);
    for (auto r : idx.unit_rows[i]) {
      const std::size_t t = data.period()[r];
      if (t < k) continue;
      auto it = row_at.find(t - k);
      if (it == row_at.end()) continue;  // gap: lag missing
      rows.push_back(r);
      lagged.push_back(source(static_cast<Eigen::Index>(it->second)));
    }
  }
  if (rows.empty()) throw InputError("derive_lags: no observation has its lag available");

  const auto n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = data.x().cols();
  std::vector<std::size_t> unit(rows.size()), period(rows.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, d + 1);
  for (std::size_t q = 0; q < rows.size(); ++q) {
    const auto r = static_cast<Eigen::Index>(rows[q]);
    const auto qq = static_cast<Eigen::Index>(q);
    unit[q] = data.unit()[rows[q]];
    period[q] = data.period()[rows[q]];
    y(qq) = data.y()(r);
    x.row(qq).head(d) = data.x().row(r);
    x(qq, d) = lagged[q];
  }
  auto names = data.covariate_names();
  names.push_back(std::string(column) + "_lag" + std::to_string(k));
  auto kinds = data.covariate_kinds();
  const bool binary = ((x.col(d).array() == 0.0) || (x.col(d).array() == 1.0)).all();
  kinds.push_back(binary ? CovariateKind::binary : CovariateKind::continuous);

  // Re-densify: the first k periods (and possibly some units) vanish.
  std::vector<char> unit_present(data.units(), false), period_present(data.periods(), false);
  for (auto u : unit) unit_present[u] = true;
  for (auto t : period) period_present[t] = true;
  std::vector<std::size_t> new_unit(data.units()), new_period(data.periods());
  IdMap ids;
  std::size_t nu = 0, nt = 0;
  for (std::size_t i = 0; i < data.units(); ++i) {
    if (unit_present[i]) {
      new_unit[i] = nu++;
      ids.unit_labels.push_back(data.ids().unit_labels[i]);
    }
  }
  for (std::size_t t = 0; t < data.periods(); ++t) {
    if (period_present[t]) {
      new_period[t] = nt++;
      ids.period_labels.push_back(data.ids().period_labels[t]);
    }
  }
  for (auto& u : unit) u = new_unit[u];
  for (auto& t : period) t = new_period[t];
  return PanelData(nu, nt, std::move(unit), std::move(period), std::move(y), std::move(x),
                   std::move(names), std::move(kinds), std::move(ids));
}

std::string describe_components(const Components& components, const IdMap& ids) {
  auto label = [](const std::vector<std::string>& labels, std::size_t k) {
    return k < labels.size() ? labels[k] : std::to_string(k + 1);
  };
  std::ostringstream out;
  out << "unit-period graph has " << components.count << " disconnected components:";
  for (std::size_t c = 0; c < components.count; ++c) {
    out << " [" << c + 1 << ": units";
    std::size_t shown = 0;
    for (std::size_t i = 0; i < components.unit_component.size(); ++i) {
      if (components.unit_component[i] != c) continue;
      if (shown++ < 8) out << ' ' << label(ids.unit_labels, i);
    }
    if (shown > 8) out << " ... (" << shown << " total)";
    out << "; periods";
    shown = 0;
    for (std::size_t t = 0; t < components.period_component.size(); ++t) {
      if (components.period_component[t] != c) continue;
      if (shown++ < 8) out << ' ' << label(ids.period_labels, t);
    }
    if (shown > 8) out << " ... (" << shown << " total)";
    out << ']';
  }
  return out.str();
}

}  // namespace panelbc
