#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cxr/model.hpp"

namespace cxr {

/// Single-file archive:
///   "APAMCKPT" | u32 version | u32 entry count
///   entries:  u32 name length | name | u8 dtype | u32 rank | i64 dims[rank]
///             | u64 payload bytes | payload (little-endian)
///   trailer:  u64 FNV-1a of every preceding byte
/// Entry names: `config.json`, `metadata.json`, then `<section>/<param>` for
/// the backbone, fpn, apam and heads sections.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f64 = 0, bytes = 1 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::int64_t> shape;
  std::vector<double> values;  // f64
  std::string bytes;           // bytes
};

void write_archive(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_archive(const std::filesystem::path& path);

/// `metadata` is free-form JSON (e.g. epoch, validation AUC).
void save_checkpoint(const std::filesystem::path& path, Model& model,
                     const std::string& metadata = "{}");

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  std::string metadata;
};

/// Rebuilds the model from the stored config. With `expected`, a differing
/// stored config is an error.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

/// Loads parameters into an existing model; the stored config must match.
void load_parameters(const std::filesystem::path& path, Model& model);

/// Copies every tensor whose section-qualified name exists in the archive
/// (e.g. backbone weights exported from another framework). Returns the
/// number of tensors copied; shape mismatches are errors.
int import_parameters(const std::filesystem::path& path, Model& model);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace cxr
