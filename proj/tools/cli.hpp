#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adaptforce {

/// Entry point for the `adaptforce` command line. `args` excludes the
/// program name. Returns a process exit code (see ExitCode).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adaptforce
