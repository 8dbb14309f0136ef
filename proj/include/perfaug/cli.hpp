#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace perfaug {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitUsage = 64;

/// Entry point for the `perfaug` command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace perfaug
