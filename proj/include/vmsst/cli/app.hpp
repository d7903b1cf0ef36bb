#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vmsst::cli {

// Exit codes shared by every command.
inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_usage = 2;      // usage, config, format and vocabulary errors
inline constexpr int exit_numerical = 3;  // non-finite loss or gradient

// Parses `args` (without the program name) and runs one command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vmsst::cli
