#pragma once

#include <iosfwd>
#include <string>

namespace rotavg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Parses and runs one invocation. Primary results go to files named by the
/// flags; `out` gets short status lines, `err` gets logs and the one-line
/// error record on failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Full `--help` text of the top-level app and every subcommand.
std::string help_text();

}  // namespace rotavg::cli
