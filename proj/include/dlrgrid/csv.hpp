#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dlrgrid::csv {

/// A parsed comma-separated file with a header row. No quoting support; the
/// formats produced and consumed here never embed commas in fields.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws InvalidArgument naming the file.
  std::size_t column(std::string_view name) const;
  std::string source;
};

Table read(const std::filesystem::path& path);
Table parse(std::string_view text, std::string source = "<memory>");

double to_double(const std::string& field, std::string_view what);
long to_long(const std::string& field, std::string_view what);

/// Fixed formatting used by every writer so outputs are byte-reproducible.
std::string fmt(double v, int precision = 6);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dlrgrid::csv
