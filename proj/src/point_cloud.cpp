#include "plantmodel/point_cloud.hpp"

#include "plantmodel/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>

namespace plantmodel {

void PointCloud::validate() const {
    if (!colors.empty() && colors.size() != points.size())
        throw ValidationError("color count does not match point count");
    if (!labels.empty() && labels.size() != points.size())
        throw ValidationError("label count does not match point count");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!points[i].allFinite())
            throw ValidationError("point " + std::to_string(i) + " has a non-finite coordinate");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw ValidationError("point " + std::to_string(i) + " has a negative label");
    }
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
    PointCloud out;
    out.points.reserve(indices.size());
    for (auto i : indices) out.points.push_back(points[i]);
    if (has_colors()) {
        out.colors.reserve(indices.size());
        for (auto i : indices) out.colors.push_back(colors[i]);
    }
    if (has_labels()) {
        out.labels.reserve(indices.size());
        for (auto i : indices) out.labels.push_back(labels[i]);
    }
    return out;
}

void PointCloud::append(const PointCloud& other) {
    if (other.empty()) return;
    const bool was_empty = empty();
    if (!was_empty && (has_colors() != other.has_colors() || has_labels() != other.has_labels()))
        throw ValidationError("cannot append clouds with different attributes");
    points.insert(points.end(), other.points.begin(), other.points.end());
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

double parse_double(std::string_view tok, std::size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError(line_no, "invalid number '" + std::string(tok) + "'");
    if (!std::isfinite(v)) throw ParseError(line_no, "non-finite value '" + std::string(tok) + "'");
    return v;
}

long parse_int(std::string_view tok, std::size_t line_no, long lo, long hi, const char* what) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || v < lo || v > hi)
        throw ParseError(line_no, std::string("invalid ") + what + " '" + std::string(tok) + "'");
    return v;
}

void put_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace

PointCloud load_cloud(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");

    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing #xyzl header");
    int cols = 0;
    {
        auto toks = split_ws(line);
        if (toks.size() != 3 || toks[0] != "#xyzl" || toks[1] != "v1" || !toks[2].starts_with("cols="))
            throw ParseError(1, "expected '#xyzl v1 cols=<3|4|6|7>'");
        cols = static_cast<int>(parse_int(toks[2].substr(5), 1, 3, 7, "column count"));
        if (cols == 5) throw ParseError(1, "invalid column count '5'");
    }
    const bool has_rgb = cols >= 6;
    const bool has_label = cols == 4 || cols == 7;

    PointCloud cloud;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (static_cast<int>(toks.size()) != cols)
            throw ParseError(line_no, "expected " + std::to_string(cols) + " columns, got " +
                                          std::to_string(toks.size()));
        Vec3 p(parse_double(toks[0], line_no), parse_double(toks[1], line_no),
               parse_double(toks[2], line_no));
        cloud.points.push_back(p);
        std::size_t next = 3;
        if (has_rgb) {
            Rgb c{};
            for (int k = 0; k < 3; ++k)
                c[k] = static_cast<std::uint8_t>(parse_int(toks[next++], line_no, 0, 255, "color"));
            cloud.colors.push_back(c);
        }
        if (has_label)
            cloud.labels.push_back(static_cast<int>(parse_int(toks[next], line_no, 0, 1 << 30, "label")));
    }
    return cloud;
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    cloud.validate();
    const int cols = 3 + (cloud.has_colors() ? 3 : 0) + (cloud.has_labels() ? 1 : 0);

    std::string out = "#xyzl v1 cols=" + std::to_string(cols) + "\n";
    out.reserve(out.size() + cloud.size() * 48);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        put_double(out, p.x());
        out += ' ';
        put_double(out, p.y());
        out += ' ';
        put_double(out, p.z());
        if (cloud.has_colors()) {
            for (auto c : cloud.colors[i]) {
                out += ' ';
                out += std::to_string(c);
            }
        }
        if (cloud.has_labels()) {
            out += ' ';
            out += std::to_string(cloud.labels[i]);
        }
        out += '\n';
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Bounds bounds_of(std::span<const Vec3> points) {
    Bounds b;
    if (points.empty()) return b;
    b.min = b.max = points.front();
    for (const auto& p : points) {
        b.min = b.min.cwiseMin(p);
        b.max = b.max.cwiseMax(p);
    }
    return b;
}

Vec3 centroid_of(std::span<const Vec3> points) {
    Vec3 c = Vec3::Zero();
    if (points.empty()) return c;
    for (const auto& p : points) c += p;
    return c / static_cast<double>(points.size());
}

}  // namespace plantmodel
