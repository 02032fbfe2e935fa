#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emanet {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitVerificationFailed = 1, kExitUsage = 2 };

/// Runs one subcommand; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emanet
