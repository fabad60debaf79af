#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace imdet::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kService = 3,
  kNumeric = 4,
};

/// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace imdet::cli
