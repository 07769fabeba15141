#pragma once

#include "plantmodel/point_cloud.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace plantmodel {

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;
};

/**
 * Static k-d tree over a set of 3D points.
 *
 * The tree copies the points it indexes, so it stays valid after the source
 * container goes away. Radius queries are inclusive (distance <= radius).
 * Ties in nearest/knn queries resolve to the lower point index, which makes
 * every query result identical to a brute-force scan.
 */
class SpatialIndex {
public:
    SpatialIndex() = default;
    explicit SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size = 12);

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    /// Requires a non-empty index.
    Neighbor nearest(const Vec3& q) const;

    /// Up to k neighbors sorted by (distance, index).
    std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const;

    /// Indices within `radius`, sorted ascending.
    std::vector<std::size_t> radius(const Vec3& q, double radius) const;

    /// Same as radius(q, r) but with distances, sorted by index.
    std::vector<Neighbor> radius_with_distance(const Vec3& q, double radius) const;

    std::size_t count_within(const Vec3& q, double radius) const;

private:
    struct Node {
        // Leaf when split_dim < 0: [begin, end) into order_.
        int split_dim = -1;
        double split = 0.0;
        std::size_t begin = 0, end = 0;
        std::size_t left = 0, right = 0;
    };

    std::size_t build(std::size_t begin, std::size_t end, std::size_t leaf_size);

    template <class Visit>
    void visit_radius(std::size_t node, const Vec3& q, double r2, Visit&& visit) const;

    std::vector<Vec3> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

}  // namespace plantmodel
