#pragma once

#include <iosfwd>

namespace bzsim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeError = 3;

/// Entry point for the `bzsim` tool: subcommands run, sweep,
/// compare-attacks and dump-data. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bzsim
