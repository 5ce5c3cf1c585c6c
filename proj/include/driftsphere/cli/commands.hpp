#pragma once

#include "driftsphere/cli/config.hpp"

#include <exception>
#include <ostream>
#include <string>
#include <vector>

namespace driftsphere::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kMissingInput = 3, kNumericalFailure = 4 };

const std::vector<std::string>& command_names();

// Runs one command; outputs go under cfg.out. Progress notes go to `log`.
// Throws the library's error types; see exit_code_for.
void run_command(const std::string& name, const RunConfig& cfg, std::ostream& log);

int exit_code_for(const std::exception& e);

}  // namespace driftsphere::cli
