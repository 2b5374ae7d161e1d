#pragma once

#include <string>
#include <vector>

namespace tessera::cli {

enum ExitCode : int { kOk = 0, kUserError = 1, kRuntimeError = 2 };

/// Parses and executes one command. Every invocation appends a record to
/// the run log, including failed ones.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace tessera::cli
