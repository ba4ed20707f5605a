#pragma once

#include <string>
#include <vector>

namespace m3sr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // failed check, I/O or invalid input
inline constexpr int kExitUsage = 2;

// Parses argv and runs one subcommand: synth, train, infer, eval, verify,
// info or bench. Never throws; errors are reported on stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace m3sr::cli
