#pragma once

#include "plantmodel/classes.hpp"
#include "plantmodel/clustering.hpp"
#include "plantmodel/point_cloud.hpp"
#include "plantmodel/transform.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace plantmodel {

/// Least-squares transform taking `src[i]` onto `dst[i]`. Throws
/// AlignmentError when the points are (nearly) collinear.
RigidTransform fit_transform(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale = false);

struct IcpResult {
    RigidTransform transform;
    double rms = 0.0;                 // nearest-neighbor RMS under `transform`, meters
    std::vector<double> rms_history;  // one entry per accepted iterate, starting with `init`
    int iterations = 0;
};

/// Point-to-point ICP moving `source` onto `target`. Stops when the RMS gain
/// drops below `tol` or after `max_iter` solves. An iterate that would raise
/// the RMS is rejected, so rms_history never increases.
IcpResult icp(const PointCloud& source, const PointCloud& target, const RigidTransform& init = {},
              int max_iter = 50, double tol = 1e-7, bool with_scale = false);

struct RansacResult {
    RigidTransform transform;
    double inlier_fraction = 0.0;  // share of target points explained by the moved source
};

/// Coarse alignment from distance-congruent point triplets. A hypothesis is
/// scored by the fraction of target points with a moved source point within
/// `inlier_tol`. Throws AlignmentError if no hypothesis reaches 10%.
RansacResult ransac_align(const PointCloud& source, const PointCloud& target, int n_iter, double inlier_tol,
                          std::uint64_t seed);

struct PoseParams {
    double voxel = 0.1;        // RANSAC works on voxel-downsampled copies
    int ransac_iter = 4096;
    double inlier_tol = 0.05;
    int icp_max_iter = 100;
    double icp_tol = 1e-10;
    bool with_scale = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PoseEstimate {
    ObjectPose pose;
    RigidTransform transform;  // reference frame -> scene
    double inlier_fraction = 0.0;
    IcpResult refine;          // instance -> reference
};

/// Places `reference` onto `instance`: RANSAC from reference to instance,
/// then ICP from the instance back onto the complete reference so missing
/// (occluded) parts of the instance cannot pull the fit.
PoseEstimate estimate_pose(const PointCloud& instance, const PointCloud& reference, const std::string& class_name,
                           int instance_id, const PoseParams& params);

/// Plane pose of a structural part: centroid plus principal axes, oriented
/// like the class template (floor and ceiling normal along +z, walls along +y).
ObjectPose fit_plane_pose(std::span<const Vec3> points, SemanticClass cls, int instance_id);

struct PoseFailure {
    std::string class_name;
    int instance_id = 0;
    std::string message;
};

struct PoseReport {
    std::vector<ObjectPose> poses;  // by class, then instance id
    std::vector<PoseFailure> failures;
};

/// Clusters each requested class of a labeled cloud and estimates one pose
/// per instance. Classes without a reference (clutter) are skipped; instance
/// failures are collected instead of thrown.
PoseReport estimate_all(const PointCloud& cloud, std::span<const SemanticClass> classes,
                        const std::map<SemanticClass, PointCloud>& references, const ClusterParams& cluster,
                        const PoseParams& params);

/// Transforms taking every scan into the frame of scan `anchor`, chained over
/// neighbouring pairs. Throws RegistrationError naming the failing pair.
std::vector<RigidTransform> register_scans(std::span<const PointCloud> scans, std::size_t anchor,
                                           const PoseParams& params);

}  // namespace plantmodel
