#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pesl {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // property or assertion failure
inline constexpr int kExitUsage = 2;    // usage or config error
inline constexpr int kExitIo = 3;       // I/O or protocol error

/// Runs the `pesl` command line. `args` excludes the program name. Normal
/// output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pesl
