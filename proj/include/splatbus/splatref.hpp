#pragma once

// Deterministic CPU reference rasterizer for 3D Gaussian clouds.
//
// Pixel (i, j) is sampled at image coordinates (i, j); the principal point
// sits at (width / 2, height / 2), so an on-axis Gaussian lands exactly on a
// pixel sample for even image sizes.

#include "splatbus/geometry.hpp"
#include "splatbus/image.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

namespace splatbus::splatref {

/// Zeroth-order spherical-harmonic basis constant.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kCovarianceDilation = 0.3;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;

struct GaussianCloud {
    std::vector<Eigen::Vector3d> means;
    std::vector<Eigen::Vector3d> scales;
    std::vector<Eigen::Quaterniond> rotations;
    std::vector<double> opacities;
    std::vector<Eigen::Vector3d> colors;

    std::size_t size() const { return means.size(); }
    void push_back(const Eigen::Vector3d& mean, const Eigen::Vector3d& scale, const Eigen::Quaterniond& rotation,
                   double opacity, const Eigen::Vector3d& color);

    /// Throws Errc::invalid_argument on any invariant violation.
    void validate() const;
};

struct RenderSettings {
    int width = 640;
    int height = 480;
    double fov_y = geometry::deg_to_rad(geometry::kDefaultFovYDeg);
    double near = 0.01;
    double far = 1000.0;
    double alpha_threshold = 1.0 / 255.0;
    int tile_size = 16;
    Rgb background{};

    void validate() const;
};

struct RenderOutput {
    /// Premultiplied RGBA; alpha is the accumulated opacity.
    ColorImage color;
    /// Alpha-weighted accumulated inverse depth; zero where alpha is zero.
    DepthImage invdepth;
};

struct ProjectedSplat {
    Eigen::Vector2d center;
    Eigen::Matrix2d covariance;
    double depth = 0.0;
};

/// Returns std::nullopt when the Gaussian is culled (depth at or before
/// `near`, or the 3-sigma footprint misses the viewport).
std::optional<ProjectedSplat> project_gaussian(const Eigen::Vector3d& mean, const Eigen::Vector3d& scale,
                                               const Eigen::Quaterniond& rotation, const geometry::ViewState& view,
                                               const geometry::Intrinsics& intr, double near = 0.01);

/// Renders with width, height and fov from `settings`; only the
/// world_to_camera transform of `view` is used.
RenderOutput rasterize(const GaussianCloud& cloud, const geometry::ViewState& view, const RenderSettings& settings);

/// C + (1 - A) * background, alpha kept.
ColorImage apply_background(const ColorImage& premultiplied, const Rgb& background);

/// Rigid transform plus uniform scale, with the pose converted from its
/// convention into the renderer frame. Throws Errc::invalid_argument for a
/// non-positive scale and Errc::malformed_pose for a bad pose.
GaussianCloud transform_cloud(const GaussianCloud& cloud, const geometry::Pose& object_pose, double scale);

/// 4x4 object-to-world matrix used by transform_cloud (renderer frame).
Eigen::Matrix4d object_transform(const geometry::Pose& object_pose, double scale);

/// Binary little-endian PLY with the usual 3DGS vertex properties
/// (x y z f_dc_0..2 opacity scale_0..2 rot_0..3, rot_0 = w). Higher SH
/// bands and other properties are skipped.
GaussianCloud load_ply(const std::filesystem::path& path);
void write_ply(const GaussianCloud& cloud, const std::filesystem::path& path);

/// Three Gaussians in front of the default camera (red, green, blue) at
/// staggered depths.
GaussianCloud demo_scene();

} // namespace splatbus::splatref
