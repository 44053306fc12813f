#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cxr {

inline constexpr const char* kToolVersion = "0.1.0";

/// Record of one CLI invocation, written next to its outputs. `argv`
/// reproduces the run (see `apam replay`).
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::string config_json = "{}";
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string started;
  std::string finished;
};

/// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

/// Writes via a temporary file and rename.
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

/// Atomic whole-file text write (temporary file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace cxr
