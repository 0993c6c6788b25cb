#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace guilt::cli {

inline constexpr std::string_view kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,  // includes diverged training and degenerate statistics
  kUsage = 2,         // unknown subcommand or flag, bad flag value
  kMissingInput = 3,
  kInvalidData = 4,   // malformed or schema-violating input
};

/// Runs one command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace guilt::cli
