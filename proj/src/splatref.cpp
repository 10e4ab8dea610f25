#include "splatbus/splatref.hpp"

#include "splatbus/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace splatbus::splatref {

void GaussianCloud::push_back(const Eigen::Vector3d& mean, const Eigen::Vector3d& scale,
                              const Eigen::Quaterniond& rotation, double opacity, const Eigen::Vector3d& color)
{
    means.push_back(mean);
    scales.push_back(scale);
    rotations.push_back(rotation);
    opacities.push_back(opacity);
    colors.push_back(color);
}

void GaussianCloud::validate() const
{
    const std::size_t n = means.size();
    if (scales.size() != n || rotations.size() != n || opacities.size() != n || colors.size() != n)
        throw Error(Errc::invalid_argument, "gaussian cloud attribute arrays differ in length");
    for (std::size_t i = 0; i < n; ++i) {
        if (!means[i].allFinite())
            throw Error(Errc::invalid_argument, "non-finite mean at " + std::to_string(i));
        if (!(scales[i].minCoeff() > 0.0) || !scales[i].allFinite())
            throw Error(Errc::invalid_argument, "non-positive scale at " + std::to_string(i));
        if (!(opacities[i] >= 0.0 && opacities[i] <= 1.0))
            throw Error(Errc::invalid_argument, "opacity outside [0, 1] at " + std::to_string(i));
        if (std::abs(rotations[i].norm() - 1.0) > 1e-4)
            throw Error(Errc::invalid_argument, "non-unit rotation at " + std::to_string(i));
        if (!colors[i].allFinite())
            throw Error(Errc::invalid_argument, "non-finite color at " + std::to_string(i));
    }
}

void RenderSettings::validate() const
{
    if (width <= 0 || height <= 0)
        throw Error(Errc::invalid_argument, "render size must be positive");
    if (!(near > 0.0) || !(far > near))
        throw Error(Errc::invalid_argument, "render settings require 0 < near < far");
    if (!(fov_y > 0.0) || !(fov_y < 3.14159))
        throw Error(Errc::invalid_argument, "fov_y must lie in (0, pi)");
    if (tile_size <= 0 || (tile_size & (tile_size - 1)) != 0)
        throw Error(Errc::invalid_argument, "tile_size must be a power of two");
}

// ---------------------------------------------------------------------------

std::optional<ProjectedSplat> project_gaussian(const Eigen::Vector3d& mean, const Eigen::Vector3d& scale,
                                               const Eigen::Quaterniond& rotation, const geometry::ViewState& view,
                                               const geometry::Intrinsics& intr, double near)
{
    const Eigen::Matrix3d w = view.rotation();
    const Eigen::Vector3d t = w * mean + view.translation();
    if (!(t.z() > near))
        return std::nullopt;

    const Eigen::Matrix3d r = rotation.normalized().toRotationMatrix();
    const Eigen::Matrix3d cov3 = r * scale.cwiseAbs2().asDiagonal() * r.transpose();

    const double inv_z = 1.0 / t.z();
    Eigen::Matrix<double, 2, 3> j;
    j << intr.fx * inv_z, 0.0, -intr.fx * t.x() * inv_z * inv_z,
         0.0, intr.fy * inv_z, -intr.fy * t.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> jw = j * w;

    ProjectedSplat s;
    s.covariance = jw * cov3 * jw.transpose();
    s.covariance(0, 1) = s.covariance(1, 0) = 0.5 * (s.covariance(0, 1) + s.covariance(1, 0));
    s.covariance += kCovarianceDilation * Eigen::Matrix2d::Identity();
    s.center = {intr.fx * t.x() * inv_z + intr.cx, intr.fy * t.y() * inv_z + intr.cy};
    s.depth = t.z();

    const double a = s.covariance(0, 0);
    const double c = s.covariance(1, 1);
    const double b = s.covariance(0, 1);
    const double mid = 0.5 * (a + c);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - (a * c - b * b)));
    const double radius = 3.0 * std::sqrt(lambda_max);
    const double w_px = 2.0 * intr.cx;
    const double h_px = 2.0 * intr.cy;
    if (s.center.x() + radius < 0.0 || s.center.x() - radius > w_px - 1.0 || s.center.y() + radius < 0.0 ||
        s.center.y() - radius > h_px - 1.0)
        return std::nullopt;
    return s;
}

namespace {

struct Splat {
    std::size_t index;
    double depth;
    double cx, cy;
    // Inverse covariance (conic) entries.
    double ia, ib, ic;
    double opacity;
    Eigen::Vector3d color;
    int x0, x1, y0, y1;
};

} // namespace

RenderOutput rasterize(const GaussianCloud& cloud, const geometry::ViewState& view, const RenderSettings& settings)
{
    settings.validate();
    const int width = settings.width;
    const int height = settings.height;
    const geometry::Intrinsics intr = geometry::intrinsics_for(settings.fov_y, width, height);

    std::vector<Splat> splats;
    splats.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.opacities[i] < settings.alpha_threshold)
            continue;
        const auto p = project_gaussian(cloud.means[i], cloud.scales[i], cloud.rotations[i], view, intr, settings.near);
        if (!p || p->depth > settings.far)
            continue;
        const Eigen::Matrix2d& cov = p->covariance;
        const double det = cov.determinant();
        if (!(det > 0.0))
            continue;
        const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
        const double radius = 3.0 * std::sqrt(lambda_max);

        Splat s;
        s.index = i;
        s.depth = p->depth;
        s.cx = p->center.x();
        s.cy = p->center.y();
        s.ia = cov(1, 1) / det;
        s.ib = -cov(0, 1) / det;
        s.ic = cov(0, 0) / det;
        s.opacity = cloud.opacities[i];
        s.color = cloud.colors[i];
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.cx - radius)));
        s.x1 = std::min(width - 1, static_cast<int>(std::floor(s.cx + radius)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.cy - radius)));
        s.y1 = std::min(height - 1, static_cast<int>(std::floor(s.cy + radius)));
        if (s.x0 > s.x1 || s.y0 > s.y1)
            continue;
        splats.push_back(s);
    }

    // Global front-to-back order. Equal depths are ordered by the splat's own
    // attributes so the result does not depend on input order; the index
    // only separates exact duplicates.
    const auto key = [&cloud](std::size_t i) {
        const auto& m = cloud.means[i];
        const auto& s = cloud.scales[i];
        const auto& q = cloud.rotations[i];
        const auto& c = cloud.colors[i];
        return std::array<double, 14>{m.x(), m.y(), m.z(), s.x(), s.y(), s.z(), q.w(),
                                      q.x(), q.y(), q.z(), cloud.opacities[i], c.x(), c.y(), c.z()};
    };
    std::sort(splats.begin(), splats.end(), [&key](const Splat& a, const Splat& b) {
        if (a.depth != b.depth)
            return a.depth < b.depth;
        const auto ka = key(a.index);
        const auto kb = key(b.index);
        if (ka != kb)
            return ka < kb;
        return a.index < b.index;
    });

    const int ts = settings.tile_size;
    const int tiles_x = (width + ts - 1) / ts;
    const int tiles_y = (height + ts - 1) / ts;
    std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::uint32_t k = 0; k < splats.size(); ++k) {
        const Splat& s = splats[k];
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx)
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(k);
    }

    RenderOutput out{ColorImage(width, height), DepthImage(width, height)};
    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            const auto& bin = bins[static_cast<std::size_t>(ty) * tiles_x + tx];
            if (bin.empty())
                continue;
            const int py_end = std::min(height, (ty + 1) * ts);
            const int px_end = std::min(width, (tx + 1) * ts);
            for (int py = ty * ts; py < py_end; ++py) {
                for (int px = tx * ts; px < px_end; ++px) {
                    double transmittance = 1.0;
                    Eigen::Vector3d c = Eigen::Vector3d::Zero();
                    double a = 0.0;
                    double d = 0.0;
                    for (const std::uint32_t k : bin) {
                        const Splat& s = splats[k];
                        if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1)
                            continue;
                        const double dx = px - s.cx;
                        const double dy = py - s.cy;
                        const double power = -0.5 * (s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy);
                        if (power > 0.0)
                            continue;
                        const double alpha = std::min(kMaxAlpha, s.opacity * std::exp(power));
                        if (alpha < settings.alpha_threshold)
                            continue;
                        const double weight = alpha * transmittance;
                        c += weight * s.color;
                        a += weight;
                        d += weight / s.depth;
                        transmittance *= 1.0 - alpha;
                        if (transmittance < kMinTransmittance)
                            break;
                    }
                    float* pix = out.color.pixel(px, py);
                    pix[0] = static_cast<float>(c.x());
                    pix[1] = static_cast<float>(c.y());
                    pix[2] = static_cast<float>(c.z());
                    pix[3] = static_cast<float>(a);
                    out.invdepth.pixel(px, py)[0] = static_cast<float>(d);
                }
            }
        }
    }
    return out;
}

ColorImage apply_background(const ColorImage& premultiplied, const Rgb& background)
{
    ColorImage out = premultiplied;
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        float* p = out.data.data() + i * 4;
        const float t = 1.0f - p[3];
        p[0] += t * background.r;
        p[1] += t * background.g;
        p[2] += t * background.b;
    }
    return out;
}

// ---------------------------------------------------------------------------

Eigen::Matrix4d object_transform(const geometry::Pose& object_pose, double scale)
{
    geometry::validate_pose(object_pose);
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw Error(Errc::invalid_argument, "object scale must be positive");
    const Eigen::Matrix3d r =
        geometry::convert_rotation(object_pose.rotation.normalized().toRotationMatrix(), object_pose.convention);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = scale * r;
    m.topRightCorner<3, 1>() = geometry::convert_point(object_pose.position, object_pose.convention);
    return m;
}

GaussianCloud transform_cloud(const GaussianCloud& cloud, const geometry::Pose& object_pose, double scale)
{
    const Eigen::Matrix4d m = object_transform(object_pose, scale);
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>() / scale;
    const Eigen::Vector3d t = m.topRightCorner<3, 1>();
    const Eigen::Quaterniond q(r);

    GaussianCloud out = cloud;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.means[i] = scale * (r * cloud.means[i]) + t;
        out.rotations[i] = (q * cloud.rotations[i]).normalized();
        out.scales[i] = scale * cloud.scales[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<PlyType> ply_type(const std::string& name)
{
    if (name == "char" || name == "int8")
        return PlyType::i8;
    if (name == "uchar" || name == "uint8")
        return PlyType::u8;
    if (name == "short" || name == "int16")
        return PlyType::i16;
    if (name == "ushort" || name == "uint16")
        return PlyType::u16;
    if (name == "int" || name == "int32")
        return PlyType::i32;
    if (name == "uint" || name == "uint32")
        return PlyType::u32;
    if (name == "float" || name == "float32")
        return PlyType::f32;
    if (name == "double" || name == "float64")
        return PlyType::f64;
    return std::nullopt;
}

std::size_t ply_size(PlyType t)
{
    switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
    }
    return 0;
}

double ply_read(const char* p, PlyType t)
{
    switch (t) {
    case PlyType::i8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::u8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::i16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::i32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::u32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type;
    std::size_t offset;
};

struct PlyElement {
    std::string name;
    std::uint64_t count = 0;
    std::vector<PlyProperty> properties;
    std::size_t stride = 0;
    bool has_list = false;
};

[[noreturn]] void parse_fail(const std::string& what)
{
    throw Error(Errc::parse_error, what);
}

double sigmoid(double x)
{
    return 1.0 / (1.0 + std::exp(-x));
}

constexpr const char* kRequired[] = {"x",       "y",       "z",       "f_dc_0", "f_dc_1", "f_dc_2",
                                     "opacity", "scale_0", "scale_1", "scale_2", "rot_0",  "rot_1",
                                     "rot_2",   "rot_3"};

} // namespace

GaussianCloud load_ply(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::io_error, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || (line != "ply" && line != "ply\r"))
        parse_fail(path.string() + " is not a PLY file");

    std::vector<PlyElement> elements;
    std::string format;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        std::istringstream ls(line);
        std::string keyword;
        ls >> keyword;
        if (keyword == "end_header") {
            header_done = true;
            break;
        }
        if (keyword == "comment" || keyword == "obj_info" || keyword.empty())
            continue;
        if (keyword == "format") {
            ls >> format;
        } else if (keyword == "element") {
            PlyElement e;
            if (!(ls >> e.name >> e.count))
                parse_fail("bad element line: " + line);
            elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (elements.empty())
                parse_fail("property before any element");
            std::string type;
            ls >> type;
            auto& e = elements.back();
            if (type == "list") {
                e.has_list = true;
                continue;
            }
            const auto t = ply_type(type);
            std::string name;
            if (!t || !(ls >> name))
                parse_fail("bad property line: " + line);
            e.properties.push_back({name, *t, e.stride});
            e.stride += ply_size(*t);
        } else {
            parse_fail("unexpected header line: " + line);
        }
    }
    if (!header_done)
        parse_fail("PLY header is not terminated");
    if (format != "binary_little_endian")
        throw Error(Errc::unsupported_asset, "only binary_little_endian PLY is supported, got '" + format + "'");

    const std::streamoff data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const std::streamoff file_end = in.tellg();
    in.seekg(data_start);
    std::uint64_t remaining = static_cast<std::uint64_t>(file_end - data_start);

    const PlyElement* vertex = nullptr;
    for (const auto& e : elements) {
        if (e.name == "vertex") {
            vertex = &e;
            break;
        }
        if (e.has_list)
            throw Error(Errc::unsupported_asset, "list properties before the vertex element are not supported");
        const std::uint64_t skip = e.count * e.stride;
        if (skip > remaining)
            parse_fail("PLY data is truncated");
        in.seekg(static_cast<std::streamoff>(skip), std::ios::cur);
        remaining -= skip;
    }
    if (vertex == nullptr)
        throw Error(Errc::unsupported_asset, "PLY has no vertex element");
    if (vertex->has_list)
        throw Error(Errc::unsupported_asset, "list properties on vertices are not supported");

    std::vector<const PlyProperty*> fields;
    for (const char* name : kRequired) {
        const auto it = std::find_if(vertex->properties.begin(), vertex->properties.end(),
                                     [&](const PlyProperty& p) { return p.name == name; });
        if (it == vertex->properties.end())
            throw Error(Errc::unsupported_asset, std::string("PLY vertex is missing property '") + name + "'");
        fields.push_back(&*it);
    }
    if (vertex->stride == 0 || vertex->count > remaining / vertex->stride)
        parse_fail("PLY data is truncated");

    std::vector<char> data(static_cast<std::size_t>(vertex->count * vertex->stride));
    if (!in.read(data.data(), static_cast<std::streamsize>(data.size())))
        parse_fail("PLY data is truncated");

    GaussianCloud cloud;
    double v[14];
    for (std::uint64_t i = 0; i < vertex->count; ++i) {
        const char* row = data.data() + i * vertex->stride;
        for (std::size_t k = 0; k < 14; ++k) {
            v[k] = ply_read(row + fields[k]->offset, fields[k]->type);
            if (!std::isfinite(v[k]))
                parse_fail("non-finite value in vertex " + std::to_string(i));
        }
        Eigen::Quaterniond q(v[10], v[11], v[12], v[13]);
        const double norm = q.norm();
        if (!(norm > 0.0))
            parse_fail("zero rotation quaternion in vertex " + std::to_string(i));
        q.coeffs() /= norm;
        const Eigen::Vector3d color(std::clamp(0.5 + kShC0 * v[3], 0.0, 1.0), std::clamp(0.5 + kShC0 * v[4], 0.0, 1.0),
                                    std::clamp(0.5 + kShC0 * v[5], 0.0, 1.0));
        cloud.push_back({v[0], v[1], v[2]}, {std::exp(v[7]), std::exp(v[8]), std::exp(v[9])}, q, sigmoid(v[6]),
                        color);
    }
    return cloud;
}

void write_ply(const GaussianCloud& cloud, const std::filesystem::path& path)
{
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::io_error, "cannot write " + path.string());
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    for (const char* name : kRequired)
        out << "property float " << name << "\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double o = std::clamp(cloud.opacities[i], 1e-7, 1.0 - 1e-7);
        const Eigen::Quaterniond& q = cloud.rotations[i];
        const double values[14] = {cloud.means[i].x(),
                                   cloud.means[i].y(),
                                   cloud.means[i].z(),
                                   (cloud.colors[i].x() - 0.5) / kShC0,
                                   (cloud.colors[i].y() - 0.5) / kShC0,
                                   (cloud.colors[i].z() - 0.5) / kShC0,
                                   std::log(o / (1.0 - o)),
                                   std::log(cloud.scales[i].x()),
                                   std::log(cloud.scales[i].y()),
                                   std::log(cloud.scales[i].z()),
                                   q.w(),
                                   q.x(),
                                   q.y(),
                                   q.z()};
        for (const double d : values) {
            const auto f = static_cast<float>(d);
            out.write(reinterpret_cast<const char*>(&f), sizeof f);
        }
    }
    if (!out)
        throw Error(Errc::io_error, "failed writing " + path.string());
}

GaussianCloud demo_scene()
{
    GaussianCloud cloud;
    const Eigen::Quaterniond tilt(Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitZ()));
    cloud.push_back({-0.6, 0.1, 3.0}, {0.35, 0.2, 0.2}, tilt, 0.9, {0.9, 0.15, 0.1});
    cloud.push_back({0.0, -0.2, 4.0}, {0.3, 0.45, 0.3}, Eigen::Quaterniond::Identity(), 0.8, {0.1, 0.85, 0.2});
    cloud.push_back({0.7, 0.25, 5.0}, {0.5, 0.3, 0.4}, tilt.conjugate(), 0.95, {0.15, 0.3, 0.95});
    return cloud;
}

} // namespace splatbus::splatref
