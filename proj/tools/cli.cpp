#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "panelbc/bias.hpp"
#include "panelbc/design_config.hpp"
#include "panelbc/effects.hpp"
#include "panelbc/error.hpp"
#include "panelbc/estimator.hpp"
#include "panelbc/jackknife.hpp"
#include "panelbc/simlab.hpp"
#include "panelbc/two_way.hpp"

namespace panelbc::cli {

namespace {

using json = nlohmann::ordered_json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + v[k];
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

json vec(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

json mat(const MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
  return a;
}

json named(const std::vector<std::string>& names, const VectorXd& v) {
  json o = json::object();
  for (std::size_t k = 0; k < names.size(); ++k) o[names[k]] = v(static_cast<Eigen::Index>(k));
  return o;
}

json config_json(const RunConfig& c) {
  json j;
  j["subcommand"] = c.subcommand;
  j["data"] = c.data;
  j["family"] = c.family;
  j["columns"] = {{"unit", c.unit_column},
                  {"period", c.period_column},
                  {"outcome", c.outcome_column},
                  {"covariates", c.covariates},
                  {"binary", c.binary},
                  {"continuous", c.continuous}};
  j["drop_degenerate"] = c.drop_degenerate;
  j["solver"] = {{"tol", c.tol}, {"max_iter", c.max_iter}, {"method", c.solver}};
  j["correction"] = {{"method", c.method},
                     {"trim", c.trim},
                     {"iterations", c.iterations},
                     {"splits", c.splits},
                     {"moments", c.moments}};
  j["effect"] = {{"covariate", c.covariate}, {"mode", c.mode}, {"target", c.target}};
  j["design"] = c.design;
  j["reps"] = c.reps;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["workers"] = c.workers;
  j["weights"] = c.weights;
  j["output"] = c.output;
  j["format"] = c.format;
  j["args"] = c.to_args();
  return j;
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct Loaded {
  PanelData data;
  std::size_t dropped_units = 0;
  std::size_t dropped_periods = 0;
};

Loaded load(const RunConfig& c, const Family& family) {
  if (c.data.empty()) throw InputError("--data is required");
  CsvSchema schema;
  schema.unit_column = c.unit_column;
  schema.period_column = c.period_column;
  schema.outcome_column = c.outcome_column;
  schema.covariates = c.covariates;
  for (const auto& b : c.binary) schema.kinds.emplace_back(b, CovariateKind::binary);
  for (const auto& b : c.continuous) schema.kinds.emplace_back(b, CovariateKind::continuous);
  PanelData data = load_csv(c.data, schema);
  if (c.drop_degenerate) {
    CleanResult clean = drop_degenerate(data, family, ValidateOptions{.min_obs = 1});
    return Loaded{std::move(clean.panel.data), clean.dropped_units, clean.dropped_periods};
  }
  const ValidationReport report = validate(data, family, ValidateOptions{.min_obs = 1});
  for (const auto& d : report.diagnostics) {
    if (d.kind == Diagnostic::Kind::no_variation || d.kind == Diagnostic::Kind::disconnected) {
      throw ValidationError(d.message +
                            (d.kind == Diagnostic::Kind::no_variation
                                 ? " (use --drop-degenerate to remove such units and periods)"
                                 : ""));
    }
  }
  return Loaded{std::move(data), 0, 0};
}

SolveOptions solve_options(const RunConfig& c) {
  SolveOptions o;
  o.tol_grad = c.tol;
  o.max_outer = c.max_iter;
  if (c.solver == "direct") {
    o.two_way.method = TwoWayOptions::Method::direct;
  } else if (c.solver == "alternating") {
    o.two_way.method = TwoWayOptions::Method::alternating;
  } else {
    throw InputError("--solver must be direct or alternating");
  }
  return o;
}

Moments parse_moments(const std::string& m) {
  if (m == "expected") return Moments::expected;
  if (m == "observed") return Moments::observed;
  throw InputError("--moments must be expected or observed");
}

JackknifeOptions jackknife_options(const RunConfig& c) {
  JackknifeOptions o;
  o.splits = c.splits;
  o.seed = c.seed.value_or(0);
  o.workers = c.workers;
  o.on_degenerate = c.drop_degenerate ? JackknifeOptions::OnDegenerate::drop
                                      : JackknifeOptions::OnDegenerate::error;
  o.solve = solve_options(c);
  return o;
}

json panel_json(const PanelData& data, const Loaded& l) {
  return {{"n", data.size()},
          {"units", data.units()},
          {"periods", data.periods()},
          {"balanced", data.balanced()},
          {"dropped_units", l.dropped_units},
          {"dropped_periods", l.dropped_periods}};
}

json subestimates_json(const std::vector<SubEstimate>& subs) {
  json a = json::array();
  for (const auto& s : subs) {
    a.push_back({{"scheme", s.scheme},
                 {"estimate", vec(s.beta)},
                 {"dropped_units", s.dropped_units},
                 {"dropped_periods", s.dropped_periods}});
  }
  return a;
}

void emit(const RunConfig& c, const std::string& text, std::ostream& out) {
  if (c.output.empty()) {
    out << text;
    return;
  }
  std::ofstream f(c.output, std::ios::binary);
  if (!f) throw InputError("cannot write " + c.output);
  f << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string coefficient_table(const std::vector<std::string>& names, const VectorXd& est,
                              const VectorXd& se) {
  std::ostringstream os;
  std::size_t w = 11;
  for (const auto& n : names) w = std::max(w, n.size() + 2);
  os << std::left << std::setw(static_cast<int>(w)) << "coefficient" << std::right
     << std::setw(14) << "estimate" << std::setw(14) << "std.err" << "\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    os << std::left << std::setw(static_cast<int>(w)) << names[k] << std::right << std::fixed
       << std::setprecision(6) << std::setw(14) << est(kk) << std::setw(14) << se(kk) << "\n";
  }
  return os.str();
}

std::string coefficient_csv(const std::vector<std::string>& names, const VectorXd& est,
                            const VectorXd& se) {
  std::string s = "coefficient,estimate,std_err\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    s += names[k] + "," + fmt(est(kk)) + "," + fmt(se(kk)) + "\n";
  }
  return s;
}

void check_format(const RunConfig& c, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (c.format == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
  throw InputError("--format for " + c.subcommand + " must be one of " + list);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int run_fit(const RunConfig& c, std::ostream& out) {
  check_format(c, {"json", "csv", "table"});
  const FamilyPtr family = make_family(c.family);
  const Loaded l = load(c, *family);
  const PanelData& data = l.data;
  const FitResult f = fit(data, *family, solve_options(c));
  const PanelIndex idx = build_index(data);
  const MatrixXd v = vcov_beta(f, idx);
  const VectorXd se = v.diagonal().cwiseSqrt();
  if (c.format == "table") {
    emit(c, coefficient_table(data.covariate_names(), f.beta, se), out);
    return ok;
  }
  if (c.format == "csv") {
    emit(c, coefficient_csv(data.covariate_names(), f.beta, se), out);
    return ok;
  }
  json j;
  j["config"] = config_json(c);
  j["family"] = f.family;
  j["panel"] = panel_json(data, l);
  j["covariates"] = data.covariate_names();
  j["beta"] = named(data.covariate_names(), f.beta);
  j["se"] = named(data.covariate_names(), se);
  j["vcov"] = mat(v);
  j["alpha"] = {{"labels", data.ids().unit_labels}, {"values", vec(f.alpha)}};
  j["gamma"] = {{"labels", data.ids().period_labels}, {"values", vec(f.gamma)}};
  j["loglik"] = f.loglik;
  j["dispersion"] = f.dispersion;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["max_grad"] = f.max_grad;
  j["loglik_path"] = f.loglik_path;
  emit(c, dump(j), out);
  return ok;
}

int run_correct(const RunConfig& c, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  check_format(c, {"json", "csv", "table"});
  const Method method = parse_method(c.method);
  std::vector<std::string> warnings;
  const bool jack = method == Method::jbc || method == Method::sbc || method == Method::hbc;
  if (jack && sub.count("--trim") > 0) warnings.push_back("--trim has no effect on jackknife methods");
  if (jack && sub.count("--iterations") > 0) {
    warnings.push_back("--iterations has no effect on jackknife methods");
  }
  if (!jack && sub.count("--splits") > 0) warnings.push_back("--splits only affects sbc");
  if (method != Method::abc && sub.count("--iterations") > 0 && !jack) {
    warnings.push_back("--iterations only affects abc");
  }
  const FamilyPtr family = make_family(c.family);
  const Loaded l = load(c, *family);
  const PanelData& data = l.data;
  const SolveOptions so = solve_options(c);
  const FitResult fe = fit(data, *family, so);
  const PanelIndex idx = build_index(data);

  CorrectedEstimate r;
  const BiasOptions bias{c.trim, parse_moments(c.moments)};
  switch (method) {
    case Method::fe: r = fe_estimate(fe, idx); break;
    case Method::abc: r = abc(data, *family, fe, AbcOptions{bias, c.iterations}, so); break;
    case Method::psbc: {
      PsbcOptions po;
      po.bias = bias;
      r = psbc(data, *family, fe, po, so);
      break;
    }
    case Method::jbc: r = jbc(data, *family, fe, jackknife_options(c)); break;
    case Method::sbc: r = sbc(data, *family, fe, jackknife_options(c)); break;
    case Method::hbc: r = hbc(data, *family, fe, jackknife_options(c)); break;
  }
  warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  const VectorXd se = r.vcov.diagonal().cwiseSqrt();
  if (c.format == "table") {
    emit(c, coefficient_table(data.covariate_names(), r.beta, se), out);
    return ok;
  }
  if (c.format == "csv") {
    emit(c, coefficient_csv(data.covariate_names(), r.beta, se), out);
    return ok;
  }
  json j;
  j["config"] = config_json(c);
  j["family"] = fe.family;
  j["panel"] = panel_json(data, l);
  j["method"] = method_name(method);
  j["covariates"] = data.covariate_names();
  j["beta"] = named(data.covariate_names(), r.beta);
  j["se"] = named(data.covariate_names(), se);
  j["vcov"] = mat(r.vcov);
  j["fe_beta"] = named(data.covariate_names(), fe.beta);
  if (method == Method::abc || method == Method::psbc) {
    j["bias"] = {{"B", vec(r.B)},
                 {"D", vec(r.D)},
                 {"tbar", idx.tbar},
                 {"nbar", idx.nbar},
                 {"trim", r.trim},
                 {"moments", r.moments == Moments::expected ? "expected" : "observed"}};
    j["iterations"] = r.iterations;
  }
  if (method == Method::sbc) {
    j["splits"] = r.splits;
    j["seed"] = r.seed;
  }
  j["flagged"] = r.flagged;
  j["warnings"] = warnings;
  j["subestimates"] = subestimates_json(r.subestimates);
  emit(c, dump(j), out);
  return ok;
}

EffectSpec effect_spec(const RunConfig& c, const PanelData& data) {
  if (c.covariate.empty()) throw InputError("--covariate is required");
  const auto k = data.covariate_index(c.covariate);
  if (!k) throw InputError("unknown covariate '" + c.covariate + "'");
  EffectSpec spec;
  spec.covariate = *k;
  if (c.mode.empty()) {
    spec.mode = data.covariate_kinds()[*k] == CovariateKind::binary ? EffectSpec::Mode::discrete
                                                                    : EffectSpec::Mode::marginal;
  } else if (c.mode == "discrete") {
    spec.mode = EffectSpec::Mode::discrete;
  } else if (c.mode == "marginal") {
    spec.mode = EffectSpec::Mode::marginal;
  } else {
    throw InputError("--mode must be discrete or marginal");
  }
  return spec;
}

int run_ape(const RunConfig& c, std::ostream& out) {
  check_format(c, {"json", "table"});
  const FamilyPtr family = make_family(c.family);
  const Loaded l = load(c, *family);
  const PanelData& data = l.data;
  const EffectSpec spec = effect_spec(c, data);
  const Target target = parse_target(c.target);
  const Method method = parse_method(c.method);
  const FitResult fe = fit(data, *family, solve_options(c));
  const APEResult fe_ape = ape(data, *family, fe, spec, target);
  const APEResult r = method == Method::fe
                          ? fe_ape
                          : corrected_ape(data, *family, fe, spec, target, method,
                                          jackknife_options(c));
  if (c.format == "table") {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << "APE of " << c.covariate << " ("
       << (spec.mode == EffectSpec::Mode::discrete ? "discrete" : "marginal") << ", target "
       << target_name(target) << ", " << method_name(method) << "): " << r.estimate
       << "  (se " << r.se << ")\n";
    emit(c, os.str(), out);
    return ok;
  }
  json j;
  j["config"] = config_json(c);
  j["family"] = fe.family;
  j["panel"] = panel_json(data, l);
  j["covariate"] = c.covariate;
  j["mode"] = spec.mode == EffectSpec::Mode::discrete ? "discrete" : "marginal";
  j["target"] = target_name(target);
  j["method"] = method_name(method);
  j["estimate"] = r.estimate;
  j["se"] = r.se;
  j["variance"] = {{"estimation", r.var_estimation},
                   {"units", r.var_units},
                   {"periods", r.var_periods}};
  j["fe_estimate"] = fe_ape.estimate;
  j["beta"] = named(data.covariate_names(), fe.beta);
  j["subestimates"] = subestimates_json(r.subestimates);
  emit(c, dump(j), out);
  return ok;
}

std::string pct(double v, int width) {
  std::ostringstream os;
  os << std::setw(width);
  if (std::isfinite(v)) {
    os << std::fixed << std::setprecision(1) << v;
  } else {
    os << "-";
  }
  return os.str();
}

std::string report_table(const SimReport& r) {
  const McDesign& d = r.design;
  std::ostringstream os;
  os << "design " << d.name << " (synthetic): family " << d.family << ", N = " << d.N
     << ", T = " << d.T << ", reps = " << r.reps << ", failures = " << r.failures
     << ", seed = " << d.seed << "\n";
  os << "Bias, SD and RMSE in percent of the true value; p;" << std::setprecision(2)
     << d.level << " is the coverage of nominal " << d.level << " intervals\n\n";
  constexpr int cell = 7, est_w = 12;
  const int group = 4 * cell + 3;
  os << std::setw(est_w) << "";
  for (const auto& name : r.coefficients) {
    std::string n = name.substr(0, static_cast<std::size_t>(group));
    const int pad = group - static_cast<int>(n.size());
    os << "  " << std::string(static_cast<std::size_t>(pad / 2), ' ') << n
       << std::string(static_cast<std::size_t>(pad - pad / 2), ' ');
  }
  os << "\n" << std::left << std::setw(est_w) << "Estimator" << std::right;
  for (std::size_t k = 0; k < r.coefficients.size(); ++k) {
    os << "  " << std::setw(cell) << "Bias" << ' ' << std::setw(cell) << "SD" << ' '
       << std::setw(cell) << "RMSE" << ' ' << std::setw(cell) << "p;.95";
  }
  os << "\n";
  for (const auto& e : r.estimators) {
    os << std::left << std::setw(est_w) << e << std::right;
    for (const auto& name : r.coefficients) {
      const CoefficientStats* s = nullptr;
      for (const auto& row : r.rows) {
        if (row.estimator == e && row.coefficient == name) s = &row;
      }
      if (!s) {
        os << "  " << std::setw(group) << "";
        continue;
      }
      os << "  " << pct(s->bias_pct, cell) << ' ' << pct(s->sd_pct, cell) << ' '
         << pct(s->rmse_pct, cell) << ' ' << std::setw(cell) << std::fixed << std::setprecision(2)
         << s->coverage;
    }
    os << "\n";
  }
  if (!r.failure_messages.empty()) {
    os << "\nfailed replications (first " << r.failure_messages.size() << "):\n";
    for (const auto& m : r.failure_messages) os << "  " << m << "\n";
  }
  return os.str();
}

json report_json(const SimReport& r) {
  json j;
  j["design"] = format_design(r.design);
  j["reps"] = r.reps;
  j["failures"] = r.failures;
  j["failure_messages"] = r.failure_messages;
  j["estimators"] = r.estimators;
  j["coefficients"] = r.coefficients;
  json rows = json::array();
  for (const auto& s : r.rows) {
    rows.push_back({{"estimator", s.estimator},
                    {"coefficient", s.coefficient},
                    {"truth", s.truth},
                    {"mean", s.mean},
                    {"bias", s.bias},
                    {"sd", s.sd},
                    {"rmse", s.rmse},
                    {"bias_pct", s.bias_pct},
                    {"sd_pct", s.sd_pct},
                    {"rmse_pct", s.rmse_pct},
                    {"coverage", s.coverage},
                    {"mc_se", s.mc_se},
                    {"count", s.count}});
  }
  j["rows"] = rows;
  return j;
}

int run_simulate(const RunConfig& c, std::ostream& out) {
  check_format(c, {"table", "json"});
  if (c.design.empty()) throw InputError("--design is required");
  McDesign d = load_design(c.design);
  if (c.reps > 0) d.reps = c.reps;
  if (c.seed) d.seed = *c.seed;
  const SimReport r = run_mc(d, c.workers);
  if (c.format == "json") {
    json j;
    j["config"] = config_json(c);
    j["report"] = report_json(r);
    emit(c, dump(j), out);
  } else {
    emit(c, report_table(r), out);
  }
  return ok;
}

int run_project(const RunConfig& c, std::ostream& out) {
  check_format(c, {"csv"});
  const FamilyPtr family = make_family(c.family);
  const Loaded l = load(c, *family);
  const PanelData& data = l.data;
  const PanelIndex idx = build_index(data);
  const Components comps = connected_components(idx);
  if (comps.count > 1) throw ValidationError(describe_components(comps, data.ids()));
  VectorXd w;
  if (c.weights == "unit") {
    w = VectorXd::Ones(static_cast<Eigen::Index>(data.size()));
  } else if (c.weights == "fit") {
    w = fit(data, *family, solve_options(c)).omega;
  } else {
    throw InputError("--weights must be fit or unit");
  }
  TwoWayOptions to = solve_options(c).two_way;
  const MatrixXd xt = two_way_project(data.x(), w, idx, to);
  std::ostringstream os;
  os << c.unit_column << ',' << c.period_column;
  for (const auto& n : data.covariate_names()) os << ',' << n;
  os << ",weight\n";
  for (std::size_t r = 0; r < data.size(); ++r) {
    const auto p = static_cast<Eigen::Index>(r);
    os << data.ids().unit_labels[data.unit()[r]] << ',' << data.ids().period_labels[data.period()[r]];
    for (Eigen::Index k = 0; k < xt.cols(); ++k) os << ',' << fmt(xt(p, k));
    os << ',' << fmt(w(p)) << "\n";
  }
  emit(c, os.str(), out);
  return ok;
}

const char* kind_name(Diagnostic::Kind k) {
  switch (k) {
    case Diagnostic::Kind::too_few_obs: return "too_few_obs";
    case Diagnostic::Kind::no_variation: return "no_variation";
    case Diagnostic::Kind::collinear: return "collinear";
    case Diagnostic::Kind::disconnected: return "disconnected";
  }
  return "";
}

const char* scope_name(Diagnostic::Scope s) {
  switch (s) {
    case Diagnostic::Scope::unit: return "unit";
    case Diagnostic::Scope::period: return "period";
    case Diagnostic::Scope::covariate: return "covariate";
  }
  return "";
}

int run_validate(const RunConfig& c, std::ostream& out) {
  check_format(c, {"json"});
  if (c.data.empty()) throw InputError("--data is required");
  const FamilyPtr family = make_family(c.family);
  CsvSchema schema;
  schema.unit_column = c.unit_column;
  schema.period_column = c.period_column;
  schema.outcome_column = c.outcome_column;
  schema.covariates = c.covariates;
  const PanelData data = load_csv(c.data, schema);
  const ValidationReport rep = validate(data, *family);
  json j;
  j["config"] = config_json(c);
  j["panel"] = {{"n", data.size()}, {"units", data.units()}, {"periods", data.periods()}};
  j["clean"] = rep.clean();
  json diags = json::array();
  for (const auto& d : rep.diagnostics) {
    std::string label;
    if (d.scope == Diagnostic::Scope::unit) label = data.ids().unit_labels[d.id];
    else if (d.scope == Diagnostic::Scope::period) label = data.ids().period_labels[d.id];
    else label = data.covariate_names()[d.id];
    diags.push_back({{"kind", kind_name(d.kind)},
                     {"scope", scope_name(d.scope)},
                     {"id", label},
                     {"message", d.message}});
  }
  j["diagnostics"] = diags;
  emit(c, dump(j), out);
  return rep.clean() ? ok : validation_failure;
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

void add_data_options(CLI::App* s, RunConfig& c) {
  s->add_option("--data", c.data, "input CSV (one row per observed unit-period pair)");
  s->add_option("--family", c.family, "linear, probit, logit or poisson")
      ->capture_default_str();
  s->add_option("--unit-col", c.unit_column, "unit id column")->capture_default_str();
  s->add_option("--period-col", c.period_column, "period id column")->capture_default_str();
  s->add_option("--outcome-col", c.outcome_column, "outcome column")->capture_default_str();
  s->add_option("--covariates", c.covariates, "covariate columns (default: all other columns)")
      ->delimiter(',');
  s->add_option("--binary", c.binary, "covariates forced to binary")->delimiter(',');
  s->add_option("--continuous", c.continuous, "covariates forced to continuous")->delimiter(',');
}

void add_solver_options(CLI::App* s, RunConfig& c) {
  s->add_flag("--drop-degenerate", c.drop_degenerate,
              "drop units/periods without outcome variation (also inside jackknife subpanels)");
  s->add_option("--tol", c.tol, "relative gradient tolerance")->capture_default_str();
  s->add_option("--max-iter", c.max_iter, "maximum Newton iterations")->capture_default_str();
  s->add_option("--solver", c.solver, "effect solver: direct or alternating")
      ->capture_default_str();
}

void add_output_options(CLI::App* s, RunConfig& c, const std::string& formats) {
  s->add_option("--output", c.output, "write to this file instead of stdout");
  s->add_option("--format", c.format, formats + " (default " + formats.substr(0, formats.find(',')) + ")");
}

void add_jackknife_options(CLI::App* s, RunConfig& c) {
  s->add_option("--splits", c.splits, "random unit partitions for sbc")->capture_default_str();
  s->add_option("--seed", c.seed, "seed for the sbc unit partitions (default 0)");
  s->add_option("--workers", c.workers, "threads for jackknife subfits")->capture_default_str();
}

}  // namespace

std::vector<std::string> RunConfig::to_args() const {
  std::vector<std::string> a{subcommand};
  auto opt = [&](const char* flag, const std::string& v) {
    a.emplace_back(flag);
    a.push_back(v);
  };
  auto list = [&](const char* flag, const std::vector<std::string>& v) {
    if (!v.empty()) opt(flag, join(v));
  };
  const bool data_cmd = subcommand != "simulate";
  if (data_cmd) {
    opt("--data", data);
    opt("--family", family);
    opt("--unit-col", unit_column);
    opt("--period-col", period_column);
    opt("--outcome-col", outcome_column);
    list("--covariates", covariates);
    list("--binary", binary);
    list("--continuous", continuous);
  }
  if (data_cmd && subcommand != "validate") {
    if (drop_degenerate) a.emplace_back("--drop-degenerate");
    opt("--tol", fmt(tol));
    opt("--max-iter", std::to_string(max_iter));
    opt("--solver", solver);
  }
  // only the options the method reads, so a replay raises no new warnings
  const bool analytical = method == "abc" || method == "psbc";
  if (subcommand == "correct") {
    opt("--method", method);
    if (analytical) {
      opt("--trim", std::to_string(trim));
      opt("--moments", moments);
    }
    if (method == "abc") opt("--iterations", std::to_string(iterations));
  }
  if (subcommand == "ape") {
    opt("--covariate", covariate);
    if (!mode.empty()) opt("--mode", mode);
    opt("--target", target);
    opt("--method", method);
  }
  if (subcommand == "correct" || subcommand == "ape") {
    if (method == "sbc") {
      opt("--splits", std::to_string(splits));
      if (seed) opt("--seed", std::to_string(*seed));
    }
    opt("--workers", std::to_string(workers));
  }
  if (subcommand == "simulate") {
    opt("--design", design);
    if (reps > 0) opt("--reps", std::to_string(reps));
    if (seed) opt("--seed", std::to_string(*seed));
    opt("--workers", std::to_string(workers));
  }
  if (subcommand == "project") opt("--weights", weights);
  if (!output.empty()) opt("--output", output);
  opt("--format", format);
  return a;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Two-way fixed effects panel models with incidental-parameter bias corrections",
               "panelbc"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  auto* fit_cmd = app.add_subcommand("fit", "fixed effects MLE; JSON with beta, effects, loglik");
  add_data_options(fit_cmd, c);
  add_solver_options(fit_cmd, c);
  add_output_options(fit_cmd, c, "json, csv, table");

  auto* correct_cmd = app.add_subcommand("correct", "bias-corrected estimates of beta");
  add_data_options(correct_cmd, c);
  add_solver_options(correct_cmd, c);
  correct_cmd->add_option("--method", c.method, "fe, abc, jbc, sbc, hbc or psbc")
      ->capture_default_str();
  correct_cmd->add_option("--trim", c.trim, "lag truncation M of the analytical bias estimate")
      ->capture_default_str();
  correct_cmd->add_option("--iterations", c.iterations, "abc iterations k")
      ->capture_default_str();
  correct_cmd->add_option("--moments", c.moments,
                          "expected: model expectations for same-period terms; observed: sample"
                          " derivatives")
      ->capture_default_str();
  add_jackknife_options(correct_cmd, c);
  add_output_options(correct_cmd, c, "json, csv, table");

  auto* ape_cmd = app.add_subcommand("ape", "average partial effects");
  add_data_options(ape_cmd, c);
  add_solver_options(ape_cmd, c);
  ape_cmd->add_option("--covariate", c.covariate, "covariate whose effect is averaged");
  ape_cmd->add_option("--mode", c.mode,
                      "discrete (binary covariate, 0 to 1) or marginal (derivative);"
                      " default from the covariate kind");
  ape_cmd->add_option("--target", c.target,
                      "nt: in-sample average; pop: population over units and periods;"
                      " t: population of units over the sample periods")
      ->capture_default_str();
  ape_cmd->add_option("--method", c.method, "fe, jbc, sbc or hbc");
  add_jackknife_options(ape_cmd, c);
  add_output_options(ape_cmd, c, "json, table");

  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo experiment from a design file");
  sim_cmd->add_option("--design", c.design, "key = value design file");
  sim_cmd->add_option("--reps", c.reps, "replications (overrides the design)");
  sim_cmd->add_option("--seed", c.seed, "seed (overrides the design)");
  sim_cmd->add_option("--workers", c.workers, "threads for replications (results do not"
                                              " depend on it)")
      ->capture_default_str();
  add_output_options(sim_cmd, c, "table, json");

  auto* project_cmd = app.add_subcommand("project", "CSV of two-way projected covariates x~");
  add_data_options(project_cmd, c);
  add_solver_options(project_cmd, c);
  project_cmd->add_option("--weights", c.weights,
                          "fit: information weights of the fitted model; unit: equal weights")
      ->capture_default_str();
  add_output_options(project_cmd, c, "csv");

  auto* validate_cmd = app.add_subcommand("validate", "panel diagnostics (exit 3 unless clean)");
  add_data_options(validate_cmd, c);
  add_output_options(validate_cmd, c, "json");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : input_error;
  }
  if (*sim_cmd && sim_cmd->count("--format") == 0) c.format = "table";
  if (*project_cmd && project_cmd->count("--format") == 0) c.format = "csv";

  try {
    if (*fit_cmd) {
      c.subcommand = "fit";
      return run_fit(c, out);
    }
    if (*correct_cmd) {
      c.subcommand = "correct";
      return run_correct(c, *correct_cmd, out, err);
    }
    if (*ape_cmd) {
      c.subcommand = "ape";
      if (ape_cmd->count("--method") == 0) c.method = "fe";
      return run_ape(c, out);
    }
    if (*sim_cmd) {
      c.subcommand = "simulate";
      return run_simulate(c, out);
    }
    if (*project_cmd) {
      c.subcommand = "project";
      return run_project(c, out);
    }
    if (*validate_cmd) {
      c.subcommand = "validate";
      return run_validate(c, out);
    }
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return input_error;
  } catch (const ValidationError& e) {
    err << "validation failure: " << e.what() << "\n";
    return validation_failure;
  } catch (const ConvergenceError& e) {
    err << "non-convergence: " << e.what() << "\n";
    return non_convergence;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return internal_error;
  }
  return internal_error;
}

}  // namespace panelbc::cli
