#include "plantmodel/spatial_index.hpp"

#include "plantmodel/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace plantmodel {

SpatialIndex::SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / std::max<std::size_t>(leaf_size, 1) + 1);
        build(0, points_.size(), std::max<std::size_t>(leaf_size, 1));
    }
}

std::size_t SpatialIndex::build(std::size_t begin, std::size_t end, std::size_t leaf_size) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{});
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= leaf_size) return id;

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    if (hi[dim] - lo[dim] <= 0.0) return id;  // all coincident

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return points_[a][dim] < points_[b][dim]; });
    const double split = points_[order_[mid]][dim];

    const std::size_t left = build(begin, mid, leaf_size);
    const std::size_t right = build(mid, end, leaf_size);
    Node& n = nodes_[id];
    n.split_dim = dim;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
}

// Left subtree holds values <= split, right subtree values >= split.
template <class Visit>
void SpatialIndex::visit_radius(std::size_t node, const Vec3& q, double r2, Visit&& visit) const {
    const Node& n = nodes_[node];
    if (n.split_dim < 0) {
        for (std::size_t i = n.begin; i < n.end; ++i) {
            const std::size_t idx = order_[i];
            const double d2 = (points_[idx] - q).squaredNorm();
            if (d2 <= r2) visit(idx, d2);
        }
        return;
    }
    const double diff = q[n.split_dim] - n.split;
    if (diff <= 0.0 || diff * diff <= r2) visit_radius(n.left, q, r2, visit);
    if (diff >= 0.0 || diff * diff <= r2) visit_radius(n.right, q, r2, visit);
}

Neighbor SpatialIndex::nearest(const Vec3& q) const {
    if (points_.empty()) throw ValidationError("nearest-neighbor query on an empty index");
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();

    // Explicit stack of (node, lower bound on squared distance).
    std::vector<std::pair<std::size_t, double>> stack;
    stack.reserve(64);
    stack.emplace_back(0, 0.0);
    while (!stack.empty()) {
        auto [id, bound] = stack.back();
        stack.pop_back();
        if (bound > best_d2) continue;
        const Node& n = nodes_[id];
        if (n.split_dim < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const std::size_t idx = order_[i];
                const double d2 = (points_[idx] - q).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
                    best_d2 = d2;
                    best = idx;
                }
            }
            continue;
        }
        const double diff = q[n.split_dim] - n.split;
        const double plane = diff * diff;
        const std::size_t near = diff <= 0.0 ? n.left : n.right;
        const std::size_t far = diff <= 0.0 ? n.right : n.left;
        stack.emplace_back(far, std::max(bound, plane));
        stack.emplace_back(near, bound);
    }
    return {best, std::sqrt(best_d2)};
}

std::vector<Neighbor> SpatialIndex::knn(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> out;
    if (k == 0 || points_.empty()) return out;
    k = std::min(k, points_.size());

    auto worse = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
        return a < b;
    };
    // Max-heap on (d2, index): top is the current worst kept neighbor.
    std::priority_queue<std::pair<double, std::size_t>, std::vector<std::pair<double, std::size_t>>,
                        decltype(worse)>
        heap(worse);

    std::vector<std::pair<std::size_t, double>> stack;
    stack.emplace_back(0, 0.0);
    while (!stack.empty()) {
        auto [id, bound] = stack.back();
        stack.pop_back();
        if (heap.size() == k && bound > heap.top().first) continue;
        const Node& n = nodes_[id];
        if (n.split_dim < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const std::size_t idx = order_[i];
                const std::pair<double, std::size_t> cand{(points_[idx] - q).squaredNorm(), idx};
                if (heap.size() < k) {
                    heap.push(cand);
                } else if (cand < heap.top()) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            continue;
        }
        const double diff = q[n.split_dim] - n.split;
        const double plane = diff * diff;
        const std::size_t near = diff <= 0.0 ? n.left : n.right;
        const std::size_t far = diff <= 0.0 ? n.right : n.left;
        stack.emplace_back(far, std::max(bound, plane));
        stack.emplace_back(near, bound);
    }
    out.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
        out[i] = {heap.top().second, std::sqrt(heap.top().first)};
        heap.pop();
    }
    return out;
}

std::vector<std::size_t> SpatialIndex::radius(const Vec3& q, double r) const {
    std::vector<std::size_t> out;
    if (points_.empty() || !(r >= 0.0)) return out;
    visit_radius(0, q, r * r, [&](std::size_t idx, double) { out.push_back(idx); });
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Neighbor> SpatialIndex::radius_with_distance(const Vec3& q, double r) const {
    std::vector<Neighbor> out;
    if (points_.empty() || !(r >= 0.0)) return out;
    visit_radius(0, q, r * r, [&](std::size_t idx, double d2) { out.push_back({idx, std::sqrt(d2)}); });
    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; });
    return out;
}

std::size_t SpatialIndex::count_within(const Vec3& q, double r) const {
    std::size_t n = 0;
    if (points_.empty() || !(r >= 0.0)) return 0;
    visit_radius(0, q, r * r, [&](std::size_t, double) { ++n; });
    return n;
}

}  // namespace plantmodel
