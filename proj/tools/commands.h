#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rvae::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitTraining = 4,
  kExitSchema = 5,
  kExitUnsupported = 6,
};

// Runs one command line (without the program name). Diagnostics go to `err`,
// short progress lines to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rvae::cli
