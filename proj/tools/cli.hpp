#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace panelbc::cli {

enum ExitCode : int {
  ok = 0,
  input_error = 2,
  validation_failure = 3,
  non_convergence = 4,
  internal_error = 5,
};

// Everything a run depends on besides the input file. Serialized into every
// JSON output; to_args() gives the argument list that regenerates the run.
struct RunConfig {
  std::string subcommand;
  std::string data;
  std::string family = "logit";
  std::string unit_column = "unit";
  std::string period_column = "period";
  std::string outcome_column = "y";
  std::vector<std::string> covariates;
  std::vector<std::string> binary;
  std::vector<std::string> continuous;
  bool drop_degenerate = false;

  double tol = 1e-9;
  std::size_t max_iter = 100;
  std::string solver = "direct";

  std::string method = "abc";
  std::size_t trim = 0;
  std::size_t iterations = 1;
  std::size_t splits = 50;
  std::string moments = "expected";

  std::string covariate;
  std::string mode;  // empty: from the covariate kind
  std::string target = "nt";

  std::string design;
  std::size_t reps = 0;  // 0: the design's value
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;

  std::string weights = "fit";
  std::string output;
  std::string format = "json";

  std::vector<std::string> to_args() const;
};

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace panelbc::cli
