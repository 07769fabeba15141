#pragma once

#include "plantmodel/point_cloud.hpp"

#include <cstdint>
#include <vector>

namespace plantmodel {

/// One x-y grid cell of a cloud, resampled to a fixed point count.
struct Block {
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();  // lower-left corner, meters
    double edge = 0.0;
    std::vector<std::size_t> point_indices;      // all parent points inside the cell
    std::vector<std::size_t> resampled_indices;  // exactly block_size entries into the parent
    std::vector<Vec3> resampled_points;
};

/**
 * Cuts the cloud into an axis-aligned x-y grid anchored at its minimum x and
 * y. Only occupied cells are emitted, ordered by (row, column). Each block is
 * resampled to exactly `block_size` points: a uniform subsample when it holds
 * more, otherwise all its points plus draws with replacement. Deterministic in
 * `seed`.
 */
std::vector<Block> partition_blocks(const PointCloud& cloud, double block_edge,
                                    std::size_t block_size = 4096, std::uint64_t seed = 0);

/// Centroid per occupied voxel. Colors are averaged; the label is the voxel
/// majority with ties going to the lower class index. Output is ordered by
/// voxel key (x, then y, then z).
PointCloud downsample_voxel(const PointCloud& cloud, double voxel);

}  // namespace plantmodel
