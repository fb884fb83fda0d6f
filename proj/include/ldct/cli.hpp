#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ldct {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

/// Runs one subcommand. `args` excludes the program name. Messages go to
/// `out` and diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ldct
