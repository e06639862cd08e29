#pragma once

namespace pmlds::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kData = 3;
inline constexpr int kNumerical = 4;

/// Parses argv and runs one subcommand; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace pmlds::cli
