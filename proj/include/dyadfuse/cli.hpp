#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dyadfuse {

/// Runs one CLI invocation (`args` excludes the program name) and returns the
/// process exit code: 0 ok, 2 usage/config, 3 I/O, 4 data shape, 5 numerical.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dyadfuse
