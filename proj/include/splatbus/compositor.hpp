#pragma once

// Depth-aware blending of a splat layer with a mesh layer. One depth test per
// pixel decides which layer is in front; the front layer is alpha-blended
// over the back one, and whatever coverage remains shows the background.
// Equal depths put the splat layer in front. All math is in linear space.

#include "splatbus/image.hpp"

#include <cstddef>

namespace splatbus::compositor {

struct LayerImage {
    /// Premultiplied RGBA.
    ColorImage color;
    /// Linear depth; far_sentinel where the layer is empty.
    DepthImage depth;
};

/// Output rgb is resolved against `background`; output alpha is the combined
/// layer coverage 1 - (1 - a_splat)(1 - a_mesh). Throws
/// Errc::dimension_mismatch when the four images disagree in size.
ColorImage composite_depth_aware(const LayerImage& splat, const LayerImage& mesh, const Rgb& background);

struct CommuteReport {
    std::size_t checked = 0;
    /// Pixels where at least one layer is not fully opaque.
    std::size_t skipped = 0;
    std::size_t flagged = 0;
    double max_deviation = 0.0;
    bool ok() const { return flagged == 0; }
};

/// Where both layers are opaque, composite_depth_aware must equal a plain
/// z-test; every pixel off by more than `tolerance` is flagged.
CommuteReport composite_commutes_check(const LayerImage& splat, const LayerImage& mesh, double tolerance = 1e-6);

} // namespace splatbus::compositor
