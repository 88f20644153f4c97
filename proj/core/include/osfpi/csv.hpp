// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace osfpi {

/// Minimal comma-separated table with a header row. Fields are not quoted.
class CsvTable {
 public:
  static CsvTable read(const std::filesystem::path& path);

  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t rows() const noexcept { return rows_.size(); }

  /// Throws IoError naming the column when it is absent.
  std::size_t column(std::string_view name) const;

  const std::string& text(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  double number(std::size_t row, std::size_t col) const;

 private:
  std::filesystem::path source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace osfpi
