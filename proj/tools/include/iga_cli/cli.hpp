// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, evaluate, embed, extract, visualize, ablate.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace iga::cli {

enum ExitCode : int {
  kSuccess = 0,
  kRuntimeError = 1,
  kUsageError = 2,
  kDiverged = 3,
};

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iga::cli
