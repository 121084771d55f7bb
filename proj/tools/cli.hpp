#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace shapereg::cli {

enum ExitCode : int {
    kSuccess = 0,
    kInputError = 2,
    kSolverFailure = 3,
    kAssertionFailure = 4,
};

// Runs one command line (args excludes the program name). Normal output goes
// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace shapereg::cli
