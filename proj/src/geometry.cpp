#include "splatbus/geometry.hpp"

#include "splatbus/error.hpp"

#include <cmath>
#include <numbers>

namespace splatbus::geometry {

double deg_to_rad(double deg)
{
    return deg * std::numbers::pi / 180.0;
}

Pose Pose::from_wire(const wire::Vec3& position, const wire::Quat& rotation, Convention convention)
{
    Pose p;
    p.position = {position[0], position[1], position[2]};
    p.rotation = Eigen::Quaterniond(rotation[3], rotation[0], rotation[1], rotation[2]);
    p.convention = convention;
    return p;
}

wire::Vec3 Pose::wire_position() const
{
    return {position.x(), position.y(), position.z()};
}

wire::Quat Pose::wire_rotation() const
{
    return {rotation.x(), rotation.y(), rotation.z(), rotation.w()};
}

Eigen::Matrix3d basis_change(Convention convention)
{
    if (convention == Convention::unity_lh_yup)
        return Eigen::Vector3d(1.0, -1.0, 1.0).asDiagonal();
    return Eigen::Matrix3d::Identity();
}

Eigen::Vector3d convert_point(const Eigen::Vector3d& p, Convention convention)
{
    return basis_change(convention) * p;
}

Eigen::Matrix3d convert_rotation(const Eigen::Matrix3d& r, Convention convention)
{
    const Eigen::Matrix3d m = basis_change(convention);
    return m * r * m;
}

void validate_pose(const Pose& pose)
{
    if (!pose.position.allFinite() || !pose.rotation.coeffs().allFinite())
        throw Error(Errc::malformed_pose, "pose contains non-finite values");
    if (std::abs(pose.rotation.norm() - 1.0) >= wire::kQuaternionTolerance)
        throw Error(Errc::malformed_pose, "rotation quaternion is not unit length");
}

void validate_view(const ViewState& view, double tol)
{
    const Eigen::Matrix4d& m = view.world_to_camera;
    if (!m.allFinite())
        throw Error(Errc::malformed_view, "view matrix contains non-finite values");
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol)
        throw Error(Errc::malformed_view, "last row of the view matrix must be (0, 0, 0, 1)");
    const Eigen::Matrix3d r = view.rotation();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol)
        throw Error(Errc::malformed_view, "rotation block is not orthonormal");
    if (std::abs(r.determinant() - 1.0) > tol)
        throw Error(Errc::malformed_view, "rotation block has det != +1");
}

ViewState client_pose_to_view(const Pose& pose, double fov_y, int width, int height)
{
    validate_pose(pose);
    const Eigen::Matrix3d r = convert_rotation(pose.rotation.normalized().toRotationMatrix(), pose.convention);
    const Eigen::Vector3d p = convert_point(pose.position, pose.convention);

    ViewState view;
    view.world_to_camera.setIdentity();
    view.world_to_camera.topLeftCorner<3, 3>() = r.transpose();
    view.world_to_camera.topRightCorner<3, 1>() = -r.transpose() * p;
    view.fov_y = fov_y;
    view.width = width;
    view.height = height;
    return view;
}

Pose view_to_client_pose(const ViewState& view, Convention convention)
{
    validate_view(view);
    const Eigen::Matrix3d r_cam_to_world = view.rotation().transpose();
    const Eigen::Vector3d p = -r_cam_to_world * view.translation();

    Pose pose;
    pose.convention = convention;
    pose.position = convert_point(p, convention);
    pose.rotation = Eigen::Quaterniond(convert_rotation(r_cam_to_world, convention)).normalized();
    return pose;
}

Intrinsics intrinsics_for(double fov_y, int width, int height)
{
    Intrinsics intr;
    intr.fy = height / (2.0 * std::tan(fov_y / 2.0));
    intr.fx = intr.fy;
    intr.cx = width / 2.0;
    intr.cy = height / 2.0;
    return intr;
}

Intrinsics intrinsics_for(const ViewState& view)
{
    return intrinsics_for(view.fov_y, view.width, view.height);
}

double invdepth_to_linear(double inv, double far_sentinel)
{
    if (!std::isfinite(inv) || inv < 0.0)
        throw Error(Errc::malformed_depth, "inverse depth must be finite and non-negative");
    return inv <= kInvDepthEpsilon ? far_sentinel : 1.0 / inv;
}

double linear_to_invdepth(double z, double far_sentinel)
{
    if (std::isnan(z) || z <= 0.0)
        throw Error(Errc::malformed_depth, "linear depth must be positive");
    return z >= far_sentinel ? 0.0 : 1.0 / z;
}

DepthImage invdepth_to_linear(const DepthImage& inv, double far_sentinel)
{
    DepthImage out(inv.width, inv.height);
    const auto sentinel = static_cast<float>(far_sentinel);
    for (std::size_t i = 0; i < inv.data.size(); ++i) {
        const float v = inv.data[i];
        if (!std::isfinite(v) || v < 0.0f)
            throw Error(Errc::malformed_depth, "inverse depth must be finite and non-negative");
        out.data[i] = v <= kInvDepthEpsilon ? sentinel : 1.0f / v;
    }
    return out;
}

DepthImage linear_to_invdepth(const DepthImage& z, double far_sentinel)
{
    DepthImage out(z.width, z.height);
    const auto sentinel = static_cast<float>(far_sentinel);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const float v = z.data[i];
        if (std::isnan(v) || v <= 0.0f)
            throw Error(Errc::malformed_depth, "linear depth must be positive");
        out.data[i] = v >= sentinel ? 0.0f : 1.0f / v;
    }
    return out;
}

Eigen::Matrix4d projection_matrix(const Intrinsics& intr, double near, double far)
{
    if (!(near > 0.0) || !(far > near) || !std::isfinite(far))
        throw Error(Errc::degenerate_projection, "projection requires 0 < near < far");
    if (!(intr.fx > 0.0) || !(intr.fy > 0.0) || !(intr.cx > 0.0) || !(intr.cy > 0.0))
        throw Error(Errc::degenerate_projection, "focal lengths and principal point must be positive");
    Eigen::Matrix4d p = Eigen::Matrix4d::Zero();
    p(0, 0) = intr.fx / intr.cx;
    p(1, 1) = intr.fy / intr.cy;
    p(2, 2) = (far + near) / (far - near);
    p(2, 3) = -2.0 * far * near / (far - near);
    p(3, 2) = 1.0;
    return p;
}

ProjectedPoint project_point(const Eigen::Matrix4d& projection, const Intrinsics& intr,
                             const Eigen::Vector3d& camera_point)
{
    const Eigen::Vector4d clip = projection * camera_point.homogeneous();
    const Eigen::Vector3d ndc = clip.head<3>() / clip.w();
    return {{(ndc.x() + 1.0) * intr.cx, (ndc.y() + 1.0) * intr.cy}, ndc.z()};
}

} // namespace splatbus::geometry
