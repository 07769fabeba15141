#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace plantmodel {

using Vec3 = Eigen::Vector3d;
using Rgb = std::array<std::uint8_t, 3>;

/**
 * Points in meters with optional per-point color and class label.
 *
 * An empty `colors` (or `labels`) vector means the attribute is absent;
 * otherwise its length equals the point count. validate() enforces this and
 * the finiteness of every coordinate.
 */
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Rgb> colors;
    std::vector<int> labels;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_colors() const { return !colors.empty(); }
    bool has_labels() const { return !labels.empty(); }

    /// Throws ValidationError when an invariant is violated.
    void validate() const;

    /// Copy of the points at `indices`, attributes included.
    PointCloud select(std::span<const std::size_t> indices) const;

    void append(const PointCloud& other);
};

/// Loads an XYZL ASCII file (`#xyzl v1 cols=<3|4|6|7>` header).
/// Throws IoError when the file cannot be opened and ParseError (with the
/// 1-based line number) on malformed or non-finite data.
PointCloud load_cloud(const std::filesystem::path& path);

/// Writes an XYZL file. Column count follows the attributes present.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// Axis-aligned bounds; both corners are zero for an empty cloud.
struct Bounds {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
};

Bounds bounds_of(std::span<const Vec3> points);

Vec3 centroid_of(std::span<const Vec3> points);

}  // namespace plantmodel
