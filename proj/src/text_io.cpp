#include "plantmodel/text_io.hpp"

#include "plantmodel/error.hpp"

#include <charconv>
#include <fstream>
#include <iterator>

namespace plantmodel {

void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

std::string format_double(double v) {
    std::string s;
    append_double(s, v);
    return s;
}

double parse_double(std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError("not a number: '" + std::string(s) + "'");
    return v;
}

long long parse_int(std::string_view s) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError("not an integer: '" + std::string(s) + "'");
    return v;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace plantmodel
