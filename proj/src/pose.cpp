#include "plantmodel/pose.hpp"

#include "plantmodel/blocks.hpp"
#include "plantmodel/error.hpp"
#include "plantmodel/spatial_index.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace plantmodel {

RigidTransform fit_transform(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale) {
    if (src.size() != dst.size()) throw ValidationError("correspondence sets differ in size");
    if (src.size() < 3) throw AlignmentError("need at least 3 correspondences");
    const double n = static_cast<double>(src.size());
    Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        ms += src[i];
        md += dst[i];
    }
    ms /= n;
    md /= n;
    Mat3 cov = Mat3::Zero();
    double var_s = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 s = src[i] - ms;
        cov += (dst[i] - md) * s.transpose();
        var_s += s.squaredNorm();
    }
    cov /= n;
    var_s /= n;

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) throw AlignmentError("degenerate geometry: points are collinear");
    Vec3 d = Vec3::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d[2] = -1.0;

    RigidTransform t;
    t.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    t.scale = with_scale ? sv.dot(d) / var_s : 1.0;
    t.translation = md - t.scale * (t.rotation * ms);
    return t;
}

namespace {

struct Matches {
    std::vector<Vec3> src, dst;
    double rms = 0.0;
};

Matches match(const PointCloud& source, const SpatialIndex& target, const RigidTransform& t, double max_dist) {
    Matches m;
    m.src.reserve(source.size());
    m.dst.reserve(source.size());
    double ss = 0.0;
    for (const auto& p : source.points) {
        const Neighbor nb = target.nearest(t.apply(p));
        if (nb.distance > max_dist) continue;
        m.src.push_back(p);
        m.dst.push_back(target.point(nb.index));
        ss += nb.distance * nb.distance;
    }
    m.rms = m.src.empty() ? std::numeric_limits<double>::infinity() : std::sqrt(ss / static_cast<double>(m.src.size()));
    return m;
}

IcpResult icp_impl(const PointCloud& source, const PointCloud& target, const RigidTransform& init, int max_iter,
                   double tol, bool with_scale, double max_dist) {
    if (source.size() < 3 || target.size() < 3) throw ValidationError("ICP needs at least 3 points per cloud");
    if (max_iter < 0) throw ValidationError("ICP max_iter must be non-negative");
    const SpatialIndex index(target.points);
    IcpResult r;
    r.transform = init;
    Matches m = match(source, index, init, max_dist);
    if (m.src.size() < 3) throw AlignmentError("ICP found fewer than 3 correspondences");
    r.rms = m.rms;
    r.rms_history.push_back(m.rms);
    while (r.iterations < max_iter) {
        const RigidTransform next = fit_transform(m.src, m.dst, with_scale);
        Matches nm = match(source, index, next, max_dist);
        if (nm.src.size() < 3 || !(nm.rms <= r.rms)) break;
        const double gain = r.rms - nm.rms;
        r.transform = next;
        r.rms = nm.rms;
        r.rms_history.push_back(nm.rms);
        ++r.iterations;
        m = std::move(nm);
        if (gain < tol) break;
    }
    return r;
}

// Unsigned surface normal per point from its k nearest neighbours. Points
// whose neighbourhood is not flat (edges, corners, sparse spots) are marked.
struct Oriented {
    std::vector<Vec3> pts, normals;
    std::vector<bool> flat;
};

constexpr std::size_t kNormalNeighbors = 12;
constexpr double kFlatness = 0.05;  // smallest / total covariance eigenvalue

Oriented orient(const std::vector<Vec3>& pts) {
    Oriented o;
    o.pts = pts;
    o.normals.resize(pts.size());
    o.flat.resize(pts.size());
    const SpatialIndex index(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto nbs = index.knn(pts[i], kNormalNeighbors);
        Vec3 c = Vec3::Zero();
        for (const auto& nb : nbs) c += pts[nb.index];
        c /= static_cast<double>(nbs.size());
        Mat3 cov = Mat3::Zero();
        for (const auto& nb : nbs) cov += (pts[nb.index] - c) * (pts[nb.index] - c).transpose();
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        o.normals[i] = es.eigenvectors().col(0);
        const double total = es.eigenvalues().sum();
        o.flat[i] = nbs.size() >= 5 && total > 0.0 && es.eigenvalues()[0] <= kFlatness * total;
    }
    return o;
}

// Rotation-invariant description of a point pair: length and the unsigned
// cosines between each normal and the segment, and between the normals.
// Angles at points off smooth surfaces carry no information and are skipped.
struct PairKey {
    double length, cos_a, cos_b, cos_ab;
    bool flat_a, flat_b;
};

PairKey pair_key(const Oriented& o, std::size_t i, std::size_t j) {
    const Vec3 d = o.pts[j] - o.pts[i];
    const double len = d.norm();
    const Vec3 u = d / len;
    return {len,       std::abs(o.normals[i].dot(u)), std::abs(o.normals[j].dot(u)), std::abs(o.normals[i].dot(o.normals[j])),
            o.flat[i], o.flat[j]};
}

constexpr double kCosTol = 0.15;

bool same_angles(const PairKey& x, const PairKey& y) {
    const bool a = x.flat_a && y.flat_a, b = x.flat_b && y.flat_b;
    return (!a || std::abs(x.cos_a - y.cos_a) <= kCosTol) && (!b || std::abs(x.cos_b - y.cos_b) <= kCosTol) &&
           (!(a && b) || std::abs(x.cos_ab - y.cos_ab) <= kCosTol);
}

// Every point's neighbours sorted by distance, for congruent-triangle lookup.
struct DistanceTable {
    Oriented o;
    std::vector<std::vector<std::pair<float, std::uint32_t>>> rows;

    explicit DistanceTable(Oriented src) : o(std::move(src)), rows(o.pts.size()) {
        const auto& pts = o.pts;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            auto& row = rows[i];
            row.reserve(pts.size() - 1);
            for (std::size_t j = 0; j < pts.size(); ++j)
                if (j != i) row.emplace_back(static_cast<float>((pts[i] - pts[j]).norm()), static_cast<std::uint32_t>(j));
            std::sort(row.begin(), row.end());
        }
    }

    // Neighbours of i at distance d +- tol.
    std::span<const std::pair<float, std::uint32_t>> shell(std::size_t i, double d, double tol) const {
        const auto& row = rows[i];
        const auto lo = std::lower_bound(row.begin(), row.end(),
                                         std::pair<float, std::uint32_t>(static_cast<float>(d - tol), 0));
        const auto hi = std::upper_bound(lo, row.end(),
                                         std::pair<float, std::uint32_t>(static_cast<float>(d + tol), UINT32_MAX));
        return {lo, hi};
    }
};

constexpr std::size_t kMaxTablePoints = 1500;
constexpr std::size_t kMaxCandidates = 64;
constexpr std::size_t kPretest = 32;
constexpr double kMinInlierFraction = 0.1;
constexpr double kGoodEnough = 0.98;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

IcpResult icp(const PointCloud& source, const PointCloud& target, const RigidTransform& init, int max_iter, double tol,
              bool with_scale) {
    return icp_impl(source, target, init, max_iter, tol, with_scale, std::numeric_limits<double>::infinity());
}

RansacResult ransac_align(const PointCloud& source, const PointCloud& target, int n_iter, double inlier_tol,
                          std::uint64_t seed) {
    if (source.size() < 3 || target.size() < 3) throw ValidationError("RANSAC needs at least 3 points per cloud");
    if (n_iter < 1) throw ValidationError("RANSAC needs at least one iteration");
    if (!(inlier_tol > 0.0)) throw ValidationError("inlier tolerance must be positive");

    std::mt19937_64 rng(seed);
    Oriented src = orient(source.points);
    if (src.pts.size() > kMaxTablePoints) {
        std::vector<std::size_t> idx(src.pts.size()), keep;
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sample(idx.begin(), idx.end(), std::back_inserter(keep), kMaxTablePoints, rng);
        Oriented sub;
        for (auto i : keep) {
            sub.pts.push_back(src.pts[i]);
            sub.normals.push_back(src.normals[i]);
            sub.flat.push_back(src.flat[i]);
        }
        src = std::move(sub);
    }
    const DistanceTable table(std::move(src));
    const SpatialIndex source_index(source.points);
    const Oriented tgt = orient(target.points);
    const auto& tp = tgt.pts;
    const double min_side = 0.2 * bounds_of(tp).extent().norm();

    auto inliers = [&](const RigidTransform& inv, std::span<const std::size_t> which) {
        std::size_t k = 0;
        for (auto i : which)
            if (source_index.nearest(inv.apply(tp[i])).distance <= inlier_tol) ++k;
        return k;
    };
    std::vector<std::size_t> all(tp.size()), corners;
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
        if (tgt.flat[i]) corners.push_back(i);
    }
    // Thin parts (bars, rails) have few flat points; draw from everything then.
    if (corners.size() * 3 < tp.size()) corners = all;

    RansacResult best;
    std::uniform_int_distribution<std::size_t> pick_corner(0, corners.size() - 1), pick(0, tp.size() - 1),
        pick_start(0, table.o.pts.size() - 1);
    std::vector<std::size_t> probe(kPretest), qs, rs;
    for (int it = 0; it < n_iter && best.inlier_fraction < kGoodEnough; ++it) {
        // A well-spread target triangle whose corners do not all share one normal.
        std::size_t a = 0, b = 0, c = 0;
        bool ok = false;
        for (int tries = 0; tries < 32 && !ok; ++tries) {
            a = corners[pick_corner(rng)];
            b = corners[pick_corner(rng)];
            c = corners[pick_corner(rng)];
            const Vec3 ab = tp[b] - tp[a], ac = tp[c] - tp[a], bc = tp[c] - tp[b];
            const auto& n = tgt.normals;
            const bool parallel = tgt.flat[a] && tgt.flat[b] && tgt.flat[c] && std::abs(n[a].dot(n[b])) > 0.9 &&
                                  std::abs(n[a].dot(n[c])) > 0.9;
            ok = !parallel && ab.norm() >= min_side && ac.norm() >= min_side && bc.norm() >= min_side &&
                 ab.cross(ac).norm() >= 0.25 * min_side * min_side;
        }
        if (!ok) continue;
        const Vec3 tri_dst[3] = {tp[a], tp[b], tp[c]};
        const PairKey kab = pair_key(tgt, a, b), kac = pair_key(tgt, a, c), kbc = pair_key(tgt, b, c);
        for (auto& p : probe) p = pick(rng);

        std::size_t candidates = 0;
        const std::size_t m = table.o.pts.size(), start = pick_start(rng);
        for (std::size_t step = 0; step < m && candidates < kMaxCandidates; ++step) {
            const std::size_t p = (start + step) % m;
            // A corner on a smooth surface must map to one as well.
            const auto& flat = table.o.flat;
            if (tgt.flat[a] && !flat[p]) continue;
            qs.clear();
            for (const auto& [dq, q] : table.shell(p, kab.length, inlier_tol))
                if ((!tgt.flat[b] || flat[q]) && same_angles(pair_key(table.o, p, q), kab)) qs.push_back(q);
            if (qs.empty()) continue;
            rs.clear();
            for (const auto& [dr, r] : table.shell(p, kac.length, inlier_tol))
                if ((!tgt.flat[c] || flat[r]) && same_angles(pair_key(table.o, p, r), kac)) rs.push_back(r);
            for (auto q : qs) {
                for (auto r : rs) {
                    if (q == r || candidates >= kMaxCandidates) continue;
                    const PairKey kqr = pair_key(table.o, q, r);
                    if (std::abs(kqr.length - kbc.length) > inlier_tol || !same_angles(kqr, kbc)) continue;
                    ++candidates;
                    const Vec3 tri_src[3] = {table.o.pts[p], table.o.pts[q], table.o.pts[r]};
                    RigidTransform t;
                    try {
                        t = fit_transform(tri_src, tri_dst);
                    } catch (const AlignmentError&) {
                        continue;
                    }
                    const RigidTransform inv = t.inverse();
                    const auto need = std::max<std::size_t>(
                        3, static_cast<std::size_t>(0.5 * best.inlier_fraction * static_cast<double>(kPretest)));
                    if (inliers(inv, probe) < need) continue;
                    const double frac = static_cast<double>(inliers(inv, all)) / static_cast<double>(tp.size());
                    if (frac > best.inlier_fraction) best = {t, frac};
                }
            }
        }
    }
    if (best.inlier_fraction < kMinInlierFraction)
        throw AlignmentError("RANSAC found no consensus (best inlier fraction " + std::to_string(best.inlier_fraction) +
                             ")");
    return best;
}

void PoseParams::validate() const {
    if (!(voxel > 0.0)) throw ValidationError("pose voxel must be positive");
    if (ransac_iter < 1) throw ValidationError("ransac_iter must be at least 1");
    if (!(inlier_tol > 0.0)) throw ValidationError("inlier_tol must be positive");
    if (icp_max_iter < 0) throw ValidationError("icp_max_iter must be non-negative");
    if (!(icp_tol >= 0.0)) throw ValidationError("icp_tol must be non-negative");
}

namespace {

PointCloud points_only(const PointCloud& c) {
    PointCloud out;
    out.points = c.points;
    return out;
}

}  // namespace

PoseEstimate estimate_pose(const PointCloud& instance, const PointCloud& reference, const std::string& class_name,
                           int instance_id, const PoseParams& params) {
    params.validate();
    try {
        const PointCloud inst = points_only(instance), ref = points_only(reference);
        const auto coarse =
            ransac_align(downsample_voxel(ref, params.voxel), downsample_voxel(inst, params.voxel), params.ransac_iter,
                         params.inlier_tol, params.seed);
        PoseEstimate e;
        e.inlier_fraction = coarse.inlier_fraction;
        e.refine = icp(inst, ref, coarse.transform.inverse(), params.icp_max_iter, params.icp_tol, params.with_scale);
        e.transform = e.refine.transform.inverse();
        e.pose = pose_from_transform(e.transform, class_name, instance_id);
        return e;
    } catch (const AlignmentError& err) {
        throw AlignmentError(class_name + " " + std::to_string(instance_id) + ": " + err.what());
    }
}

ObjectPose fit_plane_pose(std::span<const Vec3> points, SemanticClass cls, int instance_id) {
    if (!is_structural(cls)) throw ValidationError("plane fit applies to floor, ceiling and wall only");
    if (points.size() < 3) throw AlignmentError("plane fit needs at least 3 points");
    const Vec3 c = centroid_of(points);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 evals = es.eigenvalues();
    if (evals[1] <= 1e-12 * evals[2]) throw AlignmentError("plane fit on collinear points");

    // Flip v to point along `pref`, falling back to `alt` when perpendicular.
    auto orient = [](Vec3 v, const Vec3& pref, const Vec3& alt) {
        const double s = std::abs(v.dot(pref)) > 1e-9 ? v.dot(pref) : v.dot(alt);
        return s < 0 ? Vec3(-v) : v;
    };
    const Vec3 major = orient(es.eigenvectors().col(2), Vec3::UnitX(), Vec3::UnitY());
    RigidTransform t;
    t.translation = c;
    if (cls == SemanticClass::wall) {
        const Vec3 normal = orient(es.eigenvectors().col(0), Vec3::UnitY(), -Vec3::UnitX());
        t.rotation.col(0) = major;
        t.rotation.col(1) = normal;
        t.rotation.col(2) = major.cross(normal);
    } else {
        const Vec3 normal = orient(es.eigenvectors().col(0), Vec3::UnitZ(), Vec3::UnitX());
        t.rotation.col(0) = major;
        t.rotation.col(2) = normal;
        t.rotation.col(1) = normal.cross(major);
    }
    return pose_from_transform(t, std::string(class_name(cls)), instance_id);
}

PoseReport estimate_all(const PointCloud& cloud, std::span<const SemanticClass> classes,
                        const std::map<SemanticClass, PointCloud>& references, const ClusterParams& cluster,
                        const PoseParams& params) {
    if (!cloud.has_labels()) throw ValidationError("pose estimation needs a labeled cloud");
    params.validate();
    std::vector<SemanticClass> order(classes.begin(), classes.end());
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());

    PoseReport report;
    for (SemanticClass cls : order) {
        const bool structural = is_structural(cls);
        const auto ref = references.find(cls);
        if (!structural && ref == references.end()) continue;
        const auto cc = cluster_class(cloud, cloud.labels, cls, cluster);
        const std::string name(class_name(cls));
        for (std::size_t i = 0; i < cc.instances.size(); ++i) {
            const int id = static_cast<int>(i);
            try {
                if (structural) {
                    report.poses.push_back(fit_plane_pose(cc.instances[i].points, cls, id));
                } else {
                    PoseParams p = params;
                    p.seed = mix(mix(params.seed, static_cast<std::uint64_t>(cls)), i);
                    report.poses.push_back(estimate_pose(cc.instances[i], ref->second, name, id, p).pose);
                }
            } catch (const Error& e) {
                report.failures.push_back({name, id, e.what()});
            }
        }
    }
    return report;
}

std::vector<RigidTransform> register_scans(std::span<const PointCloud> scans, std::size_t anchor,
                                           const PoseParams& params) {
    if (scans.empty()) throw ValidationError("no scans to register");
    if (anchor >= scans.size()) throw ValidationError("anchor index out of range");
    params.validate();

    // Transform taking scan `from` onto scan `to`.
    auto pair = [&](std::size_t from, std::size_t to) {
        try {
            const PointCloud a = points_only(scans[from]), b = points_only(scans[to]);
            const auto coarse = ransac_align(downsample_voxel(a, params.voxel), downsample_voxel(b, params.voxel),
                                             params.ransac_iter, params.inlier_tol, mix(params.seed, from));
            // Only overlapping parts may pair up.
            return icp_impl(a, b, coarse.transform, params.icp_max_iter, params.icp_tol, params.with_scale,
                            2.0 * params.inlier_tol)
                .transform;
        } catch (const AlignmentError& e) {
            throw RegistrationError("scans " + std::to_string(from) + " and " + std::to_string(to) + ": " + e.what());
        }
    };

    std::vector<RigidTransform> out(scans.size());
    for (std::size_t i = anchor + 1; i < scans.size(); ++i) out[i] = out[i - 1].compose(pair(i, i - 1));
    for (std::size_t i = anchor; i-- > 0;) out[i] = out[i + 1].compose(pair(i, i + 1));
    return out;
}

}  // namespace plantmodel
