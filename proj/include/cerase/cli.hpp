#pragma once

#include <string>
#include <vector>

namespace cerase::cli {

/// Process exit codes of the `cerase` front end.
enum ExitStatus : int {
  kSuccess = 0,
  kVerificationFailure = 1,
  kUsageError = 2,
  kFormatError = 3,
  kNumericalError = 4,
};

/// Runs one subcommand; args excludes the program name.
int run(const std::vector<std::string>& args);

int main(int argc, char** argv);

}  // namespace cerase::cli
