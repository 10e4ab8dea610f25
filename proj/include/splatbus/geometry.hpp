#pragma once

// Client-convention poses, the renderer's camera representation, and depth
// conversions.
//
// Client convention (unity_lh_yup): left-handed, +X right, +Y up, +Z forward.
// Renderer convention (gs_rh_ydown): right-handed, +X right, +Y down,
// +Z forward. The two differ by the basis change M = diag(1, -1, 1).

#include "splatbus/image.hpp"
#include "splatbus/wire.hpp"

#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace splatbus::geometry {

using wire::Convention;

inline constexpr double kDefaultFarSentinel = 1e10;
inline constexpr double kDefaultFovYDeg = 60.0;
inline constexpr double kInvDepthEpsilon = 1e-12;

double deg_to_rad(double deg);

struct Pose {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Convention convention = Convention::gs_rh_ydown;

    static Pose from_wire(const wire::Vec3& position, const wire::Quat& rotation, Convention convention);
    wire::Vec3 wire_position() const;
    /// (x, y, z, w)
    wire::Quat wire_rotation() const;
};

struct ViewState {
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    double fov_y = deg_to_rad(kDefaultFovYDeg);
    int width = 0;
    int height = 0;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
};

struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

/// The basis change for a convention; identity for gs_rh_ydown.
Eigen::Matrix3d basis_change(Convention convention);

/// Converts a point and rotation from `convention` into the renderer frame.
/// Since M is an involution, the same call converts back.
Eigen::Vector3d convert_point(const Eigen::Vector3d& p, Convention convention);
Eigen::Matrix3d convert_rotation(const Eigen::Matrix3d& r, Convention convention);

/// Throws Errc::malformed_pose for a non-unit quaternion or non-finite input.
void validate_pose(const Pose& pose);

/// Throws Errc::malformed_view unless the rotation block is orthonormal with
/// det +1 within `tol` and the last row is (0, 0, 0, 1).
void validate_view(const ViewState& view, double tol = 1e-6);

ViewState client_pose_to_view(const Pose& pose, double fov_y, int width, int height);
Pose view_to_client_pose(const ViewState& view, Convention convention);

/// fy = height / (2 tan(fov_y / 2)), fx = fy, principal point at the center.
Intrinsics intrinsics_for(double fov_y, int width, int height);
Intrinsics intrinsics_for(const ViewState& view);

/// Scalar conversions. Throw Errc::malformed_depth on invalid input.
double invdepth_to_linear(double inv, double far_sentinel = kDefaultFarSentinel);
double linear_to_invdepth(double z, double far_sentinel = kDefaultFarSentinel);

DepthImage invdepth_to_linear(const DepthImage& inv, double far_sentinel = kDefaultFarSentinel);
DepthImage linear_to_invdepth(const DepthImage& z, double far_sentinel = kDefaultFarSentinel);

/// OpenGL-style clip transform for a +Z-forward camera: x_ndc maps to pixel
/// (x_ndc + 1) * cx, y_ndc to (y_ndc + 1) * cy, and z in [near, far] maps to
/// z_ndc in [-1, 1]. Throws Errc::degenerate_projection unless
/// 0 < near < far and the focal lengths and principal point are positive.
Eigen::Matrix4d projection_matrix(const Intrinsics& intr, double near, double far);

struct ProjectedPoint {
    Eigen::Vector2d pixel;
    double ndc_depth;
};

/// Applies a projection_matrix() result to a camera-space point.
ProjectedPoint project_point(const Eigen::Matrix4d& projection, const Intrinsics& intr,
                             const Eigen::Vector3d& camera_point);

} // namespace splatbus::geometry
