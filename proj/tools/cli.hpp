#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mwpkd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

// Parses and runs one subcommand. Machine output goes to `out`, diagnostics
// to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

}  // namespace mwpkd::cli
