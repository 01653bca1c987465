#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mpipe::cli {

/// Exit codes: 0 success, 1 pipeline or task failure, 2 usage or validation error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the default directory for pipeline runs.
inline constexpr const char* kRunRootEnv = "MPIPE_RUN_ROOT";

/// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace mpipe::cli
