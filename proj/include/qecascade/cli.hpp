#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qecascade::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 2,  // bad flags, invalid input data, missing columns
  kRemoteError = 3,  // live run finished with endpoint failures
};

/// Runs one command line. `args` excludes the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Environment variable consulted when --config is not given.
inline constexpr const char* kConfigEnvVar = "QECASCADE_CONFIG";

}  // namespace qecascade::cli
