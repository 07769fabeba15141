#include "plantmodel/blocks.hpp"

#include "plantmodel/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>

namespace plantmodel {

std::vector<Block> partition_blocks(const PointCloud& cloud, double block_edge, std::size_t block_size,
                                    std::uint64_t seed) {
    if (!(block_edge > 0.0)) throw ValidationError("block edge must be positive");
    if (block_size == 0) throw ValidationError("block size must be positive");
    if (cloud.empty()) return {};

    const Bounds b = bounds_of(cloud.points);
    std::map<std::pair<long, long>, std::vector<std::size_t>> cells;  // (row=y, col=x)
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const long col = static_cast<long>(std::floor((p.x() - b.min.x()) / block_edge));
        const long row = static_cast<long>(std::floor((p.y() - b.min.y()) / block_edge));
        cells[{row, col}].push_back(i);
    }

    std::vector<Block> blocks;
    blocks.reserve(cells.size());
    std::size_t block_no = 0;
    for (auto& [key, indices] : cells) {
        Block blk;
        blk.origin = {b.min.x() + static_cast<double>(key.second) * block_edge,
                      b.min.y() + static_cast<double>(key.first) * block_edge};
        blk.edge = block_edge;
        blk.point_indices = std::move(indices);

        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + block_no++);
        std::vector<std::size_t> pick;
        pick.reserve(block_size);
        if (blk.point_indices.size() >= block_size) {
            std::vector<std::size_t> pool = blk.point_indices;
            for (std::size_t i = 0; i < block_size; ++i) {
                std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
                std::swap(pool[i], pool[d(rng)]);
                pick.push_back(pool[i]);
            }
        } else {
            pick = blk.point_indices;
            std::uniform_int_distribution<std::size_t> d(0, blk.point_indices.size() - 1);
            while (pick.size() < block_size) pick.push_back(blk.point_indices[d(rng)]);
        }
        blk.resampled_indices = std::move(pick);
        blk.resampled_points.reserve(block_size);
        for (auto i : blk.resampled_indices) blk.resampled_points.push_back(cloud.points[i]);
        blocks.push_back(std::move(blk));
    }
    return blocks;
}

PointCloud downsample_voxel(const PointCloud& cloud, double voxel) {
    if (!(voxel > 0.0)) throw ValidationError("voxel size must be positive");

    struct Acc {
        Vec3 sum = Vec3::Zero();
        std::array<double, 3> rgb{};
        std::map<int, std::size_t> votes;
        std::size_t n = 0;
    };
    std::map<std::array<long, 3>, Acc> voxels;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const std::array<long, 3> key{static_cast<long>(std::floor(p.x() / voxel)),
                                      static_cast<long>(std::floor(p.y() / voxel)),
                                      static_cast<long>(std::floor(p.z() / voxel))};
        Acc& a = voxels[key];
        a.sum += p;
        ++a.n;
        if (cloud.has_colors())
            for (int k = 0; k < 3; ++k) a.rgb[k] += cloud.colors[i][k];
        if (cloud.has_labels()) ++a.votes[cloud.labels[i]];
    }

    PointCloud out;
    out.points.reserve(voxels.size());
    for (const auto& [key, a] : voxels) {
        const double n = static_cast<double>(a.n);
        out.points.push_back(a.sum / n);
        if (cloud.has_colors()) {
            Rgb c{};
            for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(a.rgb[k] / n));
            out.colors.push_back(c);
        }
        if (cloud.has_labels()) {
            // std::map iterates labels ascending, so strict > keeps the lowest on ties.
            int best = -1;
            std::size_t best_n = 0;
            for (const auto& [label, count] : a.votes) {
                if (count > best_n) {
                    best = label;
                    best_n = count;
                }
            }
            out.labels.push_back(best);
        }
    }
    return out;
}

}  // namespace plantmodel
