#include "plantmodel/transform.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numbers>

namespace plantmodel {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

PointCloud RigidTransform::apply(const PointCloud& cloud) const {
    PointCloud out = cloud;
    for (auto& p : out.points) p = apply(p);
    return out;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.scale = 1.0 / scale;
    inv.translation = -(inv.scale * (inv.rotation * translation));
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.scale = scale * other.scale;
    out.translation = scale * (rotation * other.translation) + translation;
    return out;
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = scale * rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
}

double RigidTransform::rotation_angle_deg() const {
    const double c = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) / kDeg;
}

double wrap_deg(double a) {
    a = std::fmod(a, 360.0);
    if (a <= -180.0) a += 360.0;
    if (a > 180.0) a -= 360.0;
    return a;
}

Mat3 rotation_from_euler_deg(double roll_deg, double pitch_deg, double yaw_deg) {
    using Eigen::AngleAxisd;
    return (AngleAxisd(yaw_deg * kDeg, Vec3::UnitZ()) * AngleAxisd(pitch_deg * kDeg, Vec3::UnitY()) *
            AngleAxisd(roll_deg * kDeg, Vec3::UnitX()))
        .toRotationMatrix();
}

Eigen::Vector3d euler_deg_from_rotation(const Mat3& r) {
    // R = Rz(y) Ry(p) Rx(r):
    //   R(2,0) = -sin p, R(2,1) = cos p sin r, R(2,2) = cos p cos r,
    //   R(1,0) = cos p sin y, R(0,0) = cos p cos y.
    const double sp = std::clamp(-r(2, 0), -1.0, 1.0);
    const double cp = std::hypot(r(0, 0), r(1, 0));
    double roll = 0.0, pitch = 0.0, yaw = 0.0;
    if (cp > 1e-9) {
        pitch = std::atan2(sp, cp);
        roll = std::atan2(r(2, 1), r(2, 2));
        yaw = std::atan2(r(1, 0), r(0, 0));
    } else {
        // Gimbal lock: only roll -/+ yaw is observable; fold it into roll.
        pitch = sp > 0 ? std::numbers::pi / 2 : -std::numbers::pi / 2;
        yaw = 0.0;
        roll = sp > 0 ? std::atan2(r(0, 1), r(1, 1)) : std::atan2(-r(0, 1), r(1, 1));
    }
    return {wrap_deg(roll / kDeg), wrap_deg(pitch / kDeg), wrap_deg(yaw / kDeg)};
}

ObjectPose pose_from_transform(const RigidTransform& t, std::string class_name, int instance_id) {
    ObjectPose p;
    p.class_name = std::move(class_name);
    p.instance_id = instance_id;
    p.x_mm = t.translation.x() * 1000.0;
    p.y_mm = t.translation.y() * 1000.0;
    p.z_mm = t.translation.z() * 1000.0;
    const Vec3 e = euler_deg_from_rotation(t.rotation);
    p.roll_deg = e[0];
    p.pitch_deg = e[1];
    p.yaw_deg = e[2];
    return p;
}

RigidTransform transform_from_pose(const ObjectPose& pose) {
    RigidTransform t;
    t.rotation = rotation_from_euler_deg(pose.roll_deg, pose.pitch_deg, pose.yaw_deg);
    t.translation = Vec3(pose.x_mm, pose.y_mm, pose.z_mm) / 1000.0;
    return t;
}

Mat3 orthonormalize(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace plantmodel
