#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fmpnet::cli {

enum ExitCode : int {
  kOk = 0,
  kIoError = 1,
  kArgumentError = 2,
  kFormatError = 3,
  kRuntimeError = 4,
};

/// Runs one invocation; args excludes the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmpnet::cli
