#pragma once

#include <iosfwd>

namespace itect::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point behind the `itect` binary. Results go only to declared output
/// paths (or `out` where a subcommand streams); diagnostics go to `err` as JSON lines.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace itect::cli
