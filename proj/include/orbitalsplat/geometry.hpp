// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace orbitalsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion stored w-first. The constructor normalizes.
class UnitQuaternion {
  public:
    UnitQuaternion() = default;
    UnitQuaternion(double w, double x, double y, double z);
    explicit UnitQuaternion(const Eigen::Quaterniond &q);

    static UnitQuaternion from_matrix(const Mat3 &rotation);

    double w() const { return q_.w(); }
    double x() const { return q_.x(); }
    double y() const { return q_.y(); }
    double z() const { return q_.z(); }

    Mat3 matrix() const { return q_.toRotationMatrix(); }
    const Eigen::Quaterniond &eigen() const { return q_; }
    std::array<double, 4> wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }

  private:
    Eigen::Quaterniond q_{1.0, 0.0, 0.0, 0.0};
};

double deg_to_rad(double deg);
double rad_to_deg(double rad);
/// Wraps an angle in degrees to (-180, 180].
double wrap_degrees(double deg);

struct CameraIntrinsics {
    double fov_y_deg = 49.1;
    int width = 512;
    int height = 512;
    double near_plane = 0.01;
    double far_plane = 100.0;

    /// Throws InvalidArgument when the invariants do not hold.
    void validate() const;
    /// Focal length in pixels, f = height / (2 tan(fov_y / 2)).
    double focal() const;
    double cx() const { return 0.5 * width; }
    double cy() const { return 0.5 * height; }
    CameraIntrinsics resized(int w, int h) const;
};

/// Camera-to-world rigid transform. The camera looks down its local -Z with +Y up.
struct CameraPose {
    Vec3 position = Vec3::Zero();
    UnitQuaternion rotation;

    Mat3 rotation_matrix() const { return rotation.matrix(); }
    /// Unit vector the camera looks along (world frame).
    Vec3 forward() const;
    Vec3 up() const;
    Vec3 right() const;
    /// World-to-camera rotation (transpose of the camera-to-world rotation).
    Mat3 world_to_camera_rotation() const;
    /// 4x4 world-to-camera matrix.
    Eigen::Matrix4d view_matrix() const;
    Vec3 to_camera(const Vec3 &world) const;
};

enum class OrbitPlane { XY, YZ, XZ };

std::string_view to_string(OrbitPlane plane);
OrbitPlane orbit_plane_from_string(std::string_view name);

/// Spherical offsets between two origin-centered cameras. Degrees and scene units.
struct RelativePose {
    double delta_elevation_deg = 0.0;
    double delta_azimuth_deg = 0.0;
    double delta_radius = 0.0;
};

/// Origin-centered spherical coordinates: elevation above the XY plane, azimuth in the XY plane
/// measured from +X toward +Y.
struct Spherical {
    double elevation_deg = 0.0;
    double azimuth_deg = 0.0;
    double radius = 0.0;
};

Spherical to_spherical(const Vec3 &p);
Vec3 from_spherical(const Spherical &s);

CameraPose look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up);

/// Poses evenly spaced on a circle in `plane`, all looking at the origin.
/// XY starts at +X with up +Z, YZ starts at +Y with up +X, XZ starts at +X with up +Y.
std::vector<CameraPose> generate_orbit_poses(OrbitPlane plane, double radius, int count);

/// One labelled view of the 48-view layout.
struct OrbitView {
    OrbitPlane plane;
    int index;
    double angle_deg;
    CameraPose pose;
};

inline constexpr int kViewsPerPlane = 16;
inline constexpr int kOrbitViewCount = 3 * kViewsPerPlane;

/// 16 views per plane over XY, YZ, XZ (in that order), angle-ascending. Shared axis poses are
/// kept, so there are always 48.
std::vector<CameraPose> generate_paper_poses(double radius);
std::vector<OrbitView> generate_orbit_views(double radius);

struct PixelProjection {
    double u;
    double v;
    double depth;
};

PixelProjection project_point(const CameraIntrinsics &intr, const CameraPose &pose, const Vec3 &p);

/// True when the camera's optical axis passes through the origin within `tol_rad`.
bool looks_at_origin(const CameraPose &pose, double tol_rad = 1e-6);

RelativePose relative_spherical(const CameraPose &reference, const CameraPose &target);

/// Inverse of relative_spherical for origin-looking cameras with +Z as up hint.
CameraPose pose_from_relative(const CameraPose &reference, const RelativePose &delta);

} // namespace orbitalsplat
