// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes:
//   0 success, 1 usage error or unknown command, 2 config error,
//   3 capacity error, 4 numeric failure, 5 missing file.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bitdiff {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitCapacity = 3,
  kExitNumeric = 4,
  kExitMissingFile = 5,
};

/// Runs one command line (without the program name) and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace bitdiff
