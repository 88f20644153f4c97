// SPDX-License-Identifier: Apache-2.0
#include "osfpi/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "osfpi/errors.hpp"

namespace osfpi {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

}  // namespace

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open {}", path.string()));
  }
  CsvTable table;
  table.source_ = path;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    auto fields = split(line);
    if (first) {
      table.header_ = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != table.header_.size()) {
      throw IoError(fmt::format("{}: row {} has {} fields, header has {}", path.string(),
                                table.rows_.size() + 1, fields.size(), table.header_.size()));
    }
    table.rows_.push_back(std::move(fields));
  }
  if (first) {
    throw IoError(fmt::format("{}: missing header row", path.string()));
  }
  return table;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) {
      return i;
    }
  }
  throw IoError(fmt::format("{}: missing column '{}'", source_.string(), name));
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows_[row][col];
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw IoError(fmt::format("{}: row {} column '{}': '{}' is not a number", source_.string(),
                              row + 1, header_[col], s));
  }
  return value;
}

}  // namespace osfpi
