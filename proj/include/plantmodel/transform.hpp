#pragma once

#include "plantmodel/point_cloud.hpp"

#include <Eigen/Geometry>

#include <string>

namespace plantmodel {

using Mat3 = Eigen::Matrix3d;

/// x -> scale * R x + t. `rotation` is kept orthonormal with det +1.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
    PointCloud apply(const PointCloud& cloud) const;

    RigidTransform inverse() const;

    /// (*this) after `other`: x -> this(other(x)).
    RigidTransform compose(const RigidTransform& other) const;

    Eigen::Matrix4d matrix() const;

    /// Rotation angle in degrees, in [0, 180].
    double rotation_angle_deg() const;
};

/// Placement of one object relative to the scene origin. Angles follow the
/// intrinsic Z-Y-X convention: R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct ObjectPose {
    std::string class_name;
    int instance_id = 0;
    double x_mm = 0.0, y_mm = 0.0, z_mm = 0.0;
    double roll_deg = 0.0, pitch_deg = 0.0, yaw_deg = 0.0;

    bool operator==(const ObjectPose&) const = default;
};

Mat3 rotation_from_euler_deg(double roll_deg, double pitch_deg, double yaw_deg);

/// Decomposes R into (roll, pitch, yaw) degrees, each in (-180, 180].
/// At gimbal lock (|pitch| = 90 deg) yaw is set to 0 and roll carries the
/// remaining rotation about the vertical.
Eigen::Vector3d euler_deg_from_rotation(const Mat3& r);

ObjectPose pose_from_transform(const RigidTransform& t, std::string class_name, int instance_id);
RigidTransform transform_from_pose(const ObjectPose& pose);

/// Wraps an angle to (-180, 180].
double wrap_deg(double a);

/// Projects a near-rotation onto SO(3) (closest orthonormal, det +1).
Mat3 orthonormalize(const Mat3& m);

}  // namespace plantmodel
