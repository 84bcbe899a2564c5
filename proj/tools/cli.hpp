#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace icl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitClient = 4;

/// Runs one command. args excludes the program name. JSON reports go to
/// `out` (or to --out files), human-readable summaries and the logged run
/// configuration go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace icl::cli
