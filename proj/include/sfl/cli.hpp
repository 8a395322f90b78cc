#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sfl {

// Stable process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitOther = 1,
    kExitConfig = 2,
    kExitCorrupt = 3,
    kExitMismatch = 4,
};

/// Runs `sfl <subcommand> [flags]`; `args` excludes the program name.
/// Subcommands: gen, train, eval, cluster-report.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sfl
