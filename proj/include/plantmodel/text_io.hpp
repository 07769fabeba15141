#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace plantmodel {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
void append_double(std::string& out, double v);

/// Parses a whole token; throws ValidationError on anything else.
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

/// Writes `text` as-is (binary mode, so line endings are preserved).
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace plantmodel
