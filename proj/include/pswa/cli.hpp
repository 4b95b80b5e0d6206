#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pswa {

// Exit codes of the pswa command.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitFlagFailure = 3 };

// Runs one subcommand (train, analyze, surface, convex-check,
// bench-overhead). `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pswa
