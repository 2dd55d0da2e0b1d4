#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qdlink {

// Exit codes of `qdlink`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;       // library error, JSON on stderr
inline constexpr int kExitUsage = 2;       // bad command line, JSON on stderr
inline constexpr int kExitInfeasible = 3;  // tune: no admissible bias

// Runs the command line `args` (without the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qdlink
