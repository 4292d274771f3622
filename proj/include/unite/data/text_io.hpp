#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Small helpers for the plain-text formats (CSV without quoting, JSON lines).
namespace unite::data {

std::vector<std::string> split_csv_line(std::string_view line);
/// Whole-field parse; throws DataError mentioning the file and line.
double parse_double(std::string_view field, const std::string& where);
long long parse_integer(std::string_view field, const std::string& where);
/// Shortest representation that parses back to the identical double.
std::string format_double(double value);

std::vector<std::string> read_lines(const std::filesystem::path& path);
/// Creates parent directories; throws DataError when the file cannot be written.
void write_text(const std::filesystem::path& path, const std::string& contents);

}  // namespace unite::data
