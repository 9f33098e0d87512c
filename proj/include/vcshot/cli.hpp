#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vcshot::cli {

// Exit codes. A failed threshold search counts as a numerical failure.
inline constexpr int kOk = 0;
inline constexpr int kUsageOrValidation = 1;
inline constexpr int kNumericalFailure = 2;

// Runs one command line (without the program name). Subcommands:
// validate | learn-vcs | encode | eval | inspect-vc.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vcshot::cli
