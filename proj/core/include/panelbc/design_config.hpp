#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "panelbc/simlab.hpp"

namespace panelbc {

// Plain-text key = value lines; '#' starts a comment. Keys may repeat only
// where noted.
//
//   preset      calibrated_logit (start from that design; later keys override)
//   name, family, sigma2, N, T
//   process     static | ar1
//   beta        comma separated, one per covariate (ar1: the lag coefficient)
//   covariate   repeatable: <name> <continuous|binary> [rho=..] [load=..] [scale=..] [shift=..]
//   alpha_mean, alpha_sd, gamma_mean, gamma_sd
//   reps, seed, estimators (comma separated), trim, splits
//   moments     expected | observed
//   level, ape (covariate name), drop_degenerate (true|false), tol
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

McDesign parse_design(std::string_view text);
McDesign load_design(const std::filesystem::path& path);

// Inverse of parse_design (every field written explicitly).
std::string format_design(const McDesign& design);

}  // namespace panelbc
