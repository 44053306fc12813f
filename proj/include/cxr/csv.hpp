#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cxr {

/// RFC-4180-style table: first line is the header, quoted fields may contain
/// commas and doubled quotes.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row, for error messages.
  std::vector<int> lines;

  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name, const std::filesystem::path& source) const;
};

std::vector<std::string> split_csv_line(std::string_view line);
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field if it contains a delimiter, quote or newline.
std::string csv_escape(std::string_view field);

std::string trim(std::string_view s);

}  // namespace cxr
