#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace splatbus {

/// Tightly packed float image with `Channels` interleaved channels per pixel.
template <int Channels>
struct Image {
    static constexpr int channels = Channels;

    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * Channels, fill)
    {
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    float* pixel(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * Channels; }
    const float* pixel(int x, int y) const
    {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * Channels;
    }

    std::span<const float> row(int y) const
    {
        return {data.data() + static_cast<std::size_t>(y) * width * Channels,
                static_cast<std::size_t>(width) * Channels};
    }
    std::span<float> row(int y)
    {
        return {data.data() + static_cast<std::size_t>(y) * width * Channels,
                static_cast<std::size_t>(width) * Channels};
    }

    bool same_size(int w, int h) const { return width == w && height == h; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// RGBA, 32-bit float, premultiplied alpha.
using ColorImage = Image<4>;
/// Single-channel 32-bit float (linear or inverse depth).
using DepthImage = Image<1>;

/// 8-bit RGBA for display and export.
struct Rgba8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Rgba8Image() = default;
    Rgba8Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 4, 0) {}
};

struct Rgb {
    float r = 0.0f;
    float g = 0.0f;
    float b = 0.0f;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

} // namespace splatbus
