#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cxr::cli {

/// Bad flags, missing inputs or invalid configuration: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses and runs one invocation; args[0] is the program name.
/// Returns the process exit code (0 ok, 1 runtime failure, 2 usage error).
int run(const std::vector<std::string>& args);

}  // namespace cxr::cli
