#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace adaptforce::csv {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

/// Strict decimal parse of one field. Throws ParseError naming `context`.
double parse_double(std::string_view field, const std::string& context);

/// Splits one comma-separated line (no quoting; the formats here never need it).
std::vector<std::string_view> split_line(std::string_view line);

/// Whole-file table: checks the header verbatim and returns the data rows,
/// each already split. Row numbers in errors are 1-based file lines.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
Table read_table(const std::filesystem::path& path, std::string_view expected_header);

/// Opens for writing, creating parent directories. Throws ConfigError on failure.
std::ofstream open_for_write(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace adaptforce::csv
