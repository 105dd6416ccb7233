#pragma once

#include <ostream>

namespace theragan::cli {

// Exit codes: 0 success, 1 runtime failure, 2 invalid config or arguments.
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Parses argv and runs one subcommand. Progress is logged to `log` as JSON
// lines; failures end with one {"level":"error",...} line there.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log);

}  // namespace theragan::cli
