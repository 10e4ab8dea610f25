#include "splatbus/compositor.hpp"

#include "splatbus/error.hpp"

#include <algorithm>
#include <cmath>

namespace splatbus::compositor {

namespace {

void check_sizes(const LayerImage& splat, const LayerImage& mesh)
{
    const int w = splat.color.width;
    const int h = splat.color.height;
    if (!splat.depth.same_size(w, h) || !mesh.color.same_size(w, h) || !mesh.depth.same_size(w, h))
        throw Error(Errc::dimension_mismatch, "compositor layers differ in size");
}

} // namespace

ColorImage composite_depth_aware(const LayerImage& splat, const LayerImage& mesh, const Rgb& background)
{
    check_sizes(splat, mesh);
    ColorImage out(splat.color.width, splat.color.height);
    const float bg[3] = {background.r, background.g, background.b};
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        const float* s = splat.color.data.data() + i * 4;
        const float* m = mesh.color.data.data() + i * 4;
        const bool splat_front = splat.depth.data[i] <= mesh.depth.data[i];
        const float* front = splat_front ? s : m;
        const float* back = splat_front ? m : s;
        const float front_t = 1.0f - front[3];
        const float back_t = 1.0f - back[3];
        float* o = out.data.data() + i * 4;
        for (int c = 0; c < 3; ++c)
            o[c] = front[c] + front_t * (back[c] + back_t * bg[c]);
        o[3] = std::clamp(1.0f - front_t * back_t, 0.0f, 1.0f);
    }
    return out;
}

CommuteReport composite_commutes_check(const LayerImage& splat, const LayerImage& mesh, double tolerance)
{
    check_sizes(splat, mesh);
    const ColorImage out = composite_depth_aware(splat, mesh, Rgb{});
    CommuteReport report;
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        const float* s = splat.color.data.data() + i * 4;
        const float* m = mesh.color.data.data() + i * 4;
        if (s[3] != 1.0f || m[3] != 1.0f) {
            ++report.skipped;
            continue;
        }
        ++report.checked;
        const float* expected = splat.depth.data[i] <= mesh.depth.data[i] ? s : m;
        const float* got = out.data.data() + i * 4;
        double dev = 0.0;
        for (int c = 0; c < 4; ++c)
            dev = std::max(dev, static_cast<double>(std::abs(got[c] - expected[c])));
        report.max_deviation = std::max(report.max_deviation, dev);
        if (dev > tolerance)
            ++report.flagged;
    }
    return report;
}

} // namespace splatbus::compositor
