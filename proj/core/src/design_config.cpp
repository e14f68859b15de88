#include "panelbc/design_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "panelbc/error.hpp"

namespace panelbc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto end = s.find(sep, start);
    std::string part = trim(s.substr(start, end == std::string_view::npos ? end : end - start));
    if (!part.empty()) out.push_back(std::move(part));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InputError("design key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  unsigned long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InputError("design key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(out);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InputError("design key '" + key + "': expected true or false");
}

CovariateProcess parse_covariate(const std::string& v) {
  const auto w = words(v);
  if (w.size() < 2) throw InputError("covariate needs '<name> <continuous|binary> ...'");
  CovariateProcess c;
  c.name = w[0];
  if (w[1] == "continuous") {
    c.kind = CovariateKind::continuous;
  } else if (w[1] == "binary") {
    c.kind = CovariateKind::binary;
  } else {
    throw InputError("covariate kind must be continuous or binary, got '" + w[1] + "'");
  }
  for (std::size_t k = 2; k < w.size(); ++k) {
    const auto eq = w[k].find('=');
    if (eq == std::string::npos) throw InputError("covariate option '" + w[k] + "' needs key=value");
    const std::string key = w[k].substr(0, eq), val = w[k].substr(eq + 1);
    if (key == "rho") c.rho = to_double(key, val);
    else if (key == "load") c.load = to_double(key, val);
    else if (key == "scale") c.scale = to_double(key, val);
    else if (key == "shift") c.shift = to_double(key, val);
    else throw InputError("unknown covariate option '" + key + "'");
  }
  return c;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw InputError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw InputError("line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

McDesign parse_design(std::string_view text) {
  McDesign d;
  bool covariates_given = false;
  std::vector<double> beta;
  bool beta_given = false;
  for (const auto& [key, v] : parse_key_values(text)) {
    if (key == "preset") {
      if (v != "calibrated_logit") throw InputError("unknown preset '" + v + "'");
      d = calibrated_logit_design(664, 9, 3, 1);
    } else if (key == "name") d.name = v;
    else if (key == "family") d.family = v;
    else if (key == "sigma2") d.sigma2 = to_double(key, v);
    else if (key == "N") d.N = to_count(key, v);
    else if (key == "T") d.T = to_count(key, v);
    else if (key == "process") {
      if (v == "static") d.process = McDesign::Process::static_covariates;
      else if (v == "ar1") d.process = McDesign::Process::ar1_outcome;
      else throw InputError("process must be static or ar1");
    } else if (key == "beta") {
      beta.clear();
      for (const auto& b : split(v, ',')) beta.push_back(to_double(key, b));
      beta_given = true;
    } else if (key == "covariate") {
      if (!covariates_given) d.covariates.clear();
      covariates_given = true;
      d.covariates.push_back(parse_covariate(v));
    } else if (key == "alpha_mean") d.alpha_mean = to_double(key, v);
    else if (key == "alpha_sd") d.alpha_sd = to_double(key, v);
    else if (key == "gamma_mean") d.gamma_mean = to_double(key, v);
    else if (key == "gamma_sd") d.gamma_sd = to_double(key, v);
    else if (key == "reps") d.reps = to_count(key, v);
    else if (key == "seed") d.seed = to_count(key, v);
    else if (key == "estimators") d.estimators = split(v, ',');
    else if (key == "trim") d.trim = to_count(key, v);
    else if (key == "splits") d.splits = to_count(key, v);
    else if (key == "moments") {
      if (v == "expected") d.moments = Moments::expected;
      else if (v == "observed") d.moments = Moments::observed;
      else throw InputError("moments must be expected or observed");
    } else if (key == "level") d.level = to_double(key, v);
    else if (key == "ape") {
      if (v.empty()) d.ape_covariate.reset();
      else d.ape_covariate = v;
    } else if (key == "drop_degenerate") d.drop_degenerate = to_bool(key, v);
    else if (key == "tol") d.solve.tol_grad = to_double(key, v);
    else throw InputError("unknown design key '" + key + "'");
  }
  if (beta_given) d.beta0 = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  check_design(d);
  return d;
}

McDesign load_design(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open design file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_design(ss.str());
}

std::string format_design(const McDesign& d) {
  std::ostringstream os;
  os << "name = " << d.name << "\n";
  os << "family = " << d.family << "\n";
  os << "sigma2 = " << num(d.sigma2) << "\n";
  os << "N = " << d.N << "\n";
  os << "T = " << d.T << "\n";
  os << "process = " << (d.process == McDesign::Process::ar1_outcome ? "ar1" : "static") << "\n";
  os << "beta = ";
  for (Eigen::Index k = 0; k < d.beta0.size(); ++k) os << (k ? ", " : "") << num(d.beta0(k));
  os << "\n";
  for (const auto& c : d.covariates) {
    os << "covariate = " << c.name << ' '
       << (c.kind == CovariateKind::binary ? "binary" : "continuous") << " rho=" << num(c.rho)
       << " load=" << num(c.load) << " scale=" << num(c.scale) << " shift=" << num(c.shift)
       << "\n";
  }
  os << "alpha_mean = " << num(d.alpha_mean) << "\n";
  os << "alpha_sd = " << num(d.alpha_sd) << "\n";
  os << "gamma_mean = " << num(d.gamma_mean) << "\n";
  os << "gamma_sd = " << num(d.gamma_sd) << "\n";
  os << "reps = " << d.reps << "\n";
  os << "seed = " << d.seed << "\n";
  os << "estimators = ";
  for (std::size_t k = 0; k < d.estimators.size(); ++k) os << (k ? ", " : "") << d.estimators[k];
  os << "\n";
  os << "trim = " << d.trim << "\n";
  os << "splits = " << d.splits << "\n";
  os << "moments = " << (d.moments == Moments::observed ? "observed" : "expected") << "\n";
  os << "level = " << num(d.level) << "\n";
  if (d.ape_covariate) os << "ape = " << *d.ape_covariate << "\n";
  os << "drop_degenerate = " << (d.drop_degenerate ? "true" : "false") << "\n";
  os << "tol = " << num(d.solve.tol_grad) << "\n";
  return os.str();
}

}  // namespace panelbc
