#include "splatbus/imageio.hpp"

#include "splatbus/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace splatbus::imageio {

namespace {

void write_bytes(const std::filesystem::path& path, const std::string& header, const void* data, std::size_t n)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::io_error, "cannot write " + path.string());
    out << header;
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out)
        throw Error(Errc::io_error, "failed writing " + path.string());
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length)
{
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

struct ReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

void png_read_from_span(png_structp png, png_bytep data, png_size_t length)
{
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + length > cur->bytes.size())
        png_error(png, "truncated PNG");
    std::memcpy(data, cur->bytes.data() + cur->pos, length);
    cur->pos += length;
}

} // namespace

void write_ppm(const Rgba8Image& image, const std::filesystem::path& path)
{
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(image.width) * image.height * 3);
    for (std::size_t i = 0, n = rgb.size() / 3; i < n; ++i)
        std::memcpy(&rgb[i * 3], &image.data[i * 4], 3);
    write_bytes(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
                rgb.data(), rgb.size());
}

std::vector<std::uint8_t> encode_png(const Rgba8Image& image)
{
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr)
        throw Error(Errc::resource_exhausted, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(Errc::io_error, "PNG encoding failed");
    }
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 1);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&image.data[static_cast<std::size_t>(y) * image.width * 4]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Rgba8Image decode_png(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw Error(Errc::parse_error, "not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr)
        throw Error(Errc::resource_exhausted, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    ReadCursor cursor{bytes, 0};
    Rgba8Image image;
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(Errc::parse_error, "PNG decoding failed");
    }
    png_set_read_fn(png, &cursor, png_read_from_span);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_gray_to_rgb(png);
    png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != std::size_t{w} * 4)
        png_error(png, "unexpected row size");
    image = Rgba8Image(static_cast<int>(w), static_cast<int>(h));
    for (png_uint_32 y = 0; y < h; ++y)
        png_read_row(png, &image.data[std::size_t{y} * w * 4], nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const Rgba8Image& image, const std::filesystem::path& path)
{
    const auto bytes = encode_png(image);
    write_bytes(path, "", bytes.data(), bytes.size());
}

Rgba8Image read_png(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::io_error, "cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

std::uint16_t depth_to_u16(float z, double vis_max)
{
    const double v = std::clamp(static_cast<double>(z) / vis_max, 0.0, 1.0);
    return static_cast<std::uint16_t>(std::lround(65535.0 * v));
}

void write_pgm16(const DepthImage& depth, const std::filesystem::path& path, double vis_max)
{
    if (!(vis_max > 0.0))
        throw Error(Errc::invalid_argument, "depth visualization range must be positive");
    std::vector<std::uint8_t> bytes(depth.pixel_count() * 2);
    for (std::size_t i = 0; i < depth.pixel_count(); ++i) {
        const std::uint16_t v = depth_to_u16(depth.data[i], vis_max);
        bytes[2 * i] = static_cast<std::uint8_t>(v >> 8); // PGM samples are big-endian
        bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xFF);
    }
    write_bytes(path, "P5\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n65535\n",
                bytes.data(), bytes.size());
}

} // namespace splatbus::imageio
