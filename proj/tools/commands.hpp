#pragma once

#include <string>
#include <vector>

namespace worldprobe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Parses `args` (without the program name), runs the selected command and
// maps errors to exit codes.
int run_cli(const std::vector<std::string>& args);

}  // namespace worldprobe::cli
