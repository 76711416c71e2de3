#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace critmap::cli {

/// Runs one command line (args[0] is the program name). Returns the process
/// exit code: 0 on success, 2 for usage errors, 1 for runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses an attack budget such as "0.03", "8/255" or, with unit "255", "8".
/// A fraction is always read literally; the unit only scales plain numbers.
double parse_eps(std::string_view text, std::string_view unit = "pixel");

}  // namespace critmap::cli
