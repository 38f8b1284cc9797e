// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/geometry.hpp"

#include "orbitalsplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace orbitalsplat {

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) : q_(w, x, y, z) {
    const double n = q_.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw InvalidArgument("quaternion must have finite non-zero norm");
    }
    q_.coeffs() /= n;
}

UnitQuaternion::UnitQuaternion(const Eigen::Quaterniond &q)
    : UnitQuaternion(q.w(), q.x(), q.y(), q.z()) {}

UnitQuaternion UnitQuaternion::from_matrix(const Mat3 &rotation) {
    Eigen::Quaterniond q(rotation);
    // Canonical sign keeps serialized poses stable.
    if (q.w() < 0.0) {
        q.coeffs() = -q.coeffs();
    }
    return UnitQuaternion(q);
}

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

double wrap_degrees(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r <= -180.0) {
        r += 360.0;
    } else if (r > 180.0) {
        r -= 360.0;
    }
    return r;
}

void CameraIntrinsics::validate() const {
    if (!(fov_y_deg > 0.0 && fov_y_deg < 180.0)) {
        throw InvalidArgument("fov_y_deg must lie in (0, 180)");
    }
    if (!(near_plane < far_plane) || !(near_plane > 0.0)) {
        throw InvalidArgument("camera clip planes must satisfy 0 < near < far");
    }
    if (width < 1 || height < 1) {
        throw InvalidArgument("image dimensions must be at least 1 pixel");
    }
}

double CameraIntrinsics::focal() const {
    return height / (2.0 * std::tan(0.5 * deg_to_rad(fov_y_deg)));
}

CameraIntrinsics CameraIntrinsics::resized(int w, int h) const {
    CameraIntrinsics out = *this;
    out.width = w;
    out.height = h;
    return out;
}

Vec3 CameraPose::forward() const { return -rotation_matrix().col(2); }
Vec3 CameraPose::up() const { return rotation_matrix().col(1); }
Vec3 CameraPose::right() const { return rotation_matrix().col(0); }

Mat3 CameraPose::world_to_camera_rotation() const { return rotation_matrix().transpose(); }

Eigen::Matrix4d CameraPose::view_matrix() const {
    Eigen::Matrix4d view = Eigen::Matrix4d::Identity();
    const Mat3 rt = world_to_camera_rotation();
    view.topLeftCorner<3, 3>() = rt;
    view.topRightCorner<3, 1>() = -rt * position;
    return view;
}

Vec3 CameraPose::to_camera(const Vec3 &world) const {
    return world_to_camera_rotation() * (world - position);
}

std::string_view to_string(OrbitPlane plane) {
    switch (plane) {
    case OrbitPlane::XY:
        return "XY";
    case OrbitPlane::YZ:
        return "YZ";
    case OrbitPlane::XZ:
        return "XZ";
    }
    return "XY";
}

OrbitPlane orbit_plane_from_string(std::string_view name) {
    if (name == "XY") {
        return OrbitPlane::XY;
    }
    if (name == "YZ") {
        return OrbitPlane::YZ;
    }
    if (name == "XZ") {
        return OrbitPlane::XZ;
    }
    throw InvalidArgument("unknown orbit plane '" + std::string(name) + "'");
}

Spherical to_spherical(const Vec3 &p) {
    Spherical s;
    s.radius = p.norm();
    if (s.radius == 0.0) {
        return s;
    }
    s.elevation_deg = rad_to_deg(std::asin(std::clamp(p.z() / s.radius, -1.0, 1.0)));
    s.azimuth_deg = rad_to_deg(std::atan2(p.y(), p.x()));
    return s;
}

Vec3 from_spherical(const Spherical &s) {
    const double el = deg_to_rad(s.elevation_deg);
    const double az = deg_to_rad(s.azimuth_deg);
    return s.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

CameraPose look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up) {
    const Vec3 back = eye - target;
    const double dist = back.norm();
    if (!(dist > 1e-9)) {
        throw DegenerateGeometry("look_at: eye and target coincide");
    }
    const Vec3 z = back / dist;
    const double up_norm = up.norm();
    if (!(up_norm > 0.0)) {
        throw DegenerateGeometry("look_at: zero-length up vector");
    }
    const Vec3 side = up.cross(z);
    // |up x z| = |up| sin(angle); parallel within 1e-6 rad is degenerate.
    if (side.norm() <= std::sin(1e-6) * up_norm) {
        throw DegenerateGeometry("look_at: up vector is parallel to the view direction");
    }
    const Vec3 x = side.normalized();
    const Vec3 y = z.cross(x);

    Mat3 r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    CameraPose pose;
    pose.position = eye;
    pose.rotation = UnitQuaternion::from_matrix(r);
    return pose;
}

namespace {

struct PlaneFrame {
    Vec3 first;
    Vec3 second;
    Vec3 up;
};

PlaneFrame plane_frame(OrbitPlane plane) {
    switch (plane) {
    case OrbitPlane::XY:
        return {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    case OrbitPlane::YZ:
        return {Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX()};
    case OrbitPlane::XZ:
        return {Vec3::UnitX(), Vec3::UnitZ(), Vec3::UnitY()};
    }
    return {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
}

} // namespace

std::vector<CameraPose> generate_orbit_poses(OrbitPlane plane, double radius, int count) {
    if (!(radius > 0.0)) {
        throw InvalidArgument("orbit radius must be positive");
    }
    if (count < 1) {
        throw InvalidArgument("orbit view count must be at least 1");
    }
    const PlaneFrame frame = plane_frame(plane);
    std::vector<CameraPose> poses;
    poses.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double theta = 2.0 * std::numbers::pi * k / count;
        const Vec3 eye = radius * (std::cos(theta) * frame.first + std::sin(theta) * frame.second);
        poses.push_back(look_at(eye, Vec3::Zero(), frame.up));
    }
    return poses;
}

std::vector<OrbitView> generate_orbit_views(double radius) {
    std::vector<OrbitView> views;
    views.reserve(kOrbitViewCount);
    for (OrbitPlane plane : {OrbitPlane::XY, OrbitPlane::YZ, OrbitPlane::XZ}) {
        auto poses = generate_orbit_poses(plane, radius, kViewsPerPlane);
        for (int i = 0; i < kViewsPerPlane; ++i) {
            views.push_back({plane, i, 360.0 * i / kViewsPerPlane, poses[static_cast<std::size_t>(i)]});
        }
    }
    return views;
}

std::vector<CameraPose> generate_paper_poses(double radius) {
    std::vector<CameraPose> poses;
    for (auto &view : generate_orbit_views(radius)) {
        poses.push_back(view.pose);
    }
    return poses;
}

PixelProjection project_point(const CameraIntrinsics &intr, const CameraPose &pose, const Vec3 &p) {
    const Vec3 t = pose.to_camera(p);
    const double depth = -t.z();
    if (!(depth > 0.0)) {
        throw BehindCamera("project_point: point is behind the camera");
    }
    const double f = intr.focal();
    return {intr.cx() + f * t.x() / depth, intr.cy() - f * t.y() / depth, depth};
}

bool looks_at_origin(const CameraPose &pose, double tol_rad) {
    const double dist = pose.position.norm();
    if (!(dist > 0.0)) {
        return false;
    }
    const Vec3 to_origin = -pose.position / dist;
    const double cosang = std::clamp(to_origin.dot(pose.forward()), -1.0, 1.0);
    // acos loses precision near 1; use the cross-product magnitude instead.
    const double sinang = to_origin.cross(pose.forward()).norm();
    return cosang > 0.0 && std::atan2(sinang, cosang) <= tol_rad;
}

RelativePose relative_spherical(const CameraPose &reference, const CameraPose &target) {
    if (!looks_at_origin(reference) || !looks_at_origin(target)) {
        throw InvalidArgument("relative_spherical: poses must look at the origin");
    }
    const Spherical a = to_spherical(reference.position);
    const Spherical b = to_spherical(target.position);
    RelativePose rel;
    rel.delta_elevation_deg = b.elevation_deg - a.elevation_deg;
    rel.delta_azimuth_deg = wrap_degrees(b.azimuth_deg - a.azimuth_deg);
    rel.delta_radius = b.radius - a.radius;
    return rel;
}

CameraPose pose_from_relative(const CameraPose &reference, const RelativePose &delta) {
    const Spherical ref = to_spherical(reference.position);
    Spherical s;
    s.elevation_deg = std::clamp(ref.elevation_deg + delta.delta_elevation_deg, -90.0, 90.0);
    s.azimuth_deg = wrap_degrees(ref.azimuth_deg + delta.delta_azimuth_deg);
    s.radius = ref.radius + delta.delta_radius;
    if (!(s.radius > 0.0)) {
        throw InvalidArgument("pose_from_relative: resulting radius must be positive");
    }
    const Vec3 eye = from_spherical(s);
    if (std::abs(s.elevation_deg) > 89.999) {
        // Straight above or below: continue the azimuth direction as the up hint.
        const double az = deg_to_rad(s.azimuth_deg);
        const double sign = s.elevation_deg > 0.0 ? -1.0 : 1.0;
        return look_at(eye, Vec3::Zero(), sign * Vec3(std::cos(az), std::sin(az), 0.0));
    }
    return look_at(eye, Vec3::Zero(), Vec3::UnitZ());
}

} // namespace orbitalsplat
