#pragma once

// Single-writer, multi-reader frame region: a 4096-byte header followed by
// an RGBA32F color plane and an R32F linear-depth plane. Publication uses a
// seqlock (odd = write in progress) plus a futex-style readiness counter so
// readers can block until a new frame appears. See LAYOUT.md for the byte
// layout, which is the cross-language contract.

#include "splatbus/image.hpp"
#include "splatbus/wire.hpp"

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>

namespace splatbus::framebus {

using wire::Transport;

inline constexpr std::size_t kHeaderBytes = 4096;
inline constexpr std::uint64_t kRowAlignment = 64;
inline constexpr std::uint32_t kLayoutVersion = 1;
inline constexpr std::uint32_t kMaxDimension = 16384;
inline constexpr char kMagic[8] = {'S', 'P', 'L', 'A', 'T', 'B', 'U', 'S'};

inline constexpr std::uint32_t kColorFormatRgba32f = 1;
inline constexpr std::uint32_t kDepthFormatR32f = 1;

/// Fixed header offsets for layout_version 1 (little-endian).
namespace offsets {
inline constexpr std::size_t magic = 0;
inline constexpr std::size_t layout_version = 8;
inline constexpr std::size_t header_bytes = 12;
inline constexpr std::size_t seq = 16;
inline constexpr std::size_t frame_index = 24;
inline constexpr std::size_t timestamp_ns = 32;
inline constexpr std::size_t checksum = 40;
inline constexpr std::size_t notify = 48;
inline constexpr std::size_t writer_state = 52;
inline constexpr std::size_t writer_pid = 56;
inline constexpr std::size_t width = 64;
inline constexpr std::size_t height = 68;
inline constexpr std::size_t color_format = 72;
inline constexpr std::size_t depth_format = 76;
inline constexpr std::size_t color_pitch = 80;
inline constexpr std::size_t depth_pitch = 88;
inline constexpr std::size_t color_offset = 96;
inline constexpr std::size_t depth_offset = 104;
inline constexpr std::size_t total_bytes = 112;
} // namespace offsets

enum class WriterState : std::uint32_t { initializing = 0, live = 1, closed = 2 };

/// Smallest multiple of 64 that holds `width * bytes_per_pixel` bytes.
std::uint64_t compute_pitch(std::uint32_t width, std::uint32_t bytes_per_pixel);

struct FrameDescriptor {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint64_t color_pitch = 0;
    std::uint64_t depth_pitch = 0;

    /// Descriptor with minimal aligned pitches.
    static FrameDescriptor for_size(std::uint32_t width, std::uint32_t height);

    /// Throws Errc::invalid_descriptor.
    void validate() const;

    std::uint64_t color_plane_bytes() const { return std::uint64_t{height} * color_pitch; }
    std::uint64_t depth_plane_bytes() const { return std::uint64_t{height} * depth_pitch; }
    std::uint64_t region_bytes() const { return kHeaderBytes + color_plane_bytes() + depth_plane_bytes(); }

    friend bool operator==(const FrameDescriptor&, const FrameDescriptor&) = default;
};

struct FrameSnapshot {
    std::uint64_t frame_index = 0;
    std::uint64_t timestamp_ns = 0;
    /// Checksum stamped by the writer (zero unless the region stamps them).
    std::uint64_t checksum = 0;
    ColorImage color;
    DepthImage depth;
};

/// 64-bit FNV-1a folded over 64-bit words of the packed color plane followed
/// by the packed depth plane. Row padding is never hashed.
std::uint64_t frame_checksum(const ColorImage& color, const DepthImage& depth);

/// Monotonic clock shared by every process on the host.
std::uint64_t monotonic_ns();

// ---------------------------------------------------------------------------
// Transport backends

class RegionMapping {
public:
    virtual ~RegionMapping() = default;
    virtual std::span<std::byte> bytes() = 0;
};

/// Provides named, contiguous, shareable memory. A GPU-interop backend would
/// implement the same interface; the library ships shared_memory and
/// inprocess.
class TransportBackend {
public:
    virtual ~TransportBackend() = default;
    virtual Transport kind() const = 0;
    /// Creates a new named region; Errc::already_exists if the name is live.
    /// The region is removed when the returned mapping is destroyed.
    virtual std::unique_ptr<RegionMapping> create(const std::string& name, std::size_t bytes) = 0;
    /// Maps an existing region. Errc::attach_failed if it does not exist or
    /// is smaller than `bytes`.
    virtual std::unique_ptr<RegionMapping> attach(const std::string& name, std::size_t bytes) = 0;
};

std::shared_ptr<TransportBackend> backend_for(Transport transport);

// ---------------------------------------------------------------------------

struct AttachmentInfo {
    Transport transport = Transport::shared_memory;
    std::string name;
    std::uint32_t layout_version = kLayoutVersion;
    std::uint64_t total_bytes = 0;
};

std::string encode_token(const AttachmentInfo& info);
/// Throws Errc::attach_failed on anything that is not a well-formed token.
AttachmentInfo decode_token(std::string_view token);

struct RegionOptions {
    /// Explicit region name; generated when empty. Shared-memory names get a
    /// leading '/' if missing.
    std::string name;
    /// Stamp frame_checksum() into the header on every publish.
    bool stamp_checksum = false;
};

class FrameWriter {
public:
    FrameWriter(std::unique_ptr<RegionMapping> mapping, AttachmentInfo info, FrameDescriptor desc,
                bool stamp_checksum);
    ~FrameWriter();
    FrameWriter(const FrameWriter&) = delete;
    FrameWriter& operator=(const FrameWriter&) = delete;

    const FrameDescriptor& descriptor() const { return desc_; }
    const std::string& token() const { return token_; }
    const AttachmentInfo& info() const { return info_; }
    std::uint64_t last_frame_index() const { return last_frame_index_; }

    /// Seqlock publication. Throws Errc::dimension_mismatch when the images
    /// do not match the descriptor and Errc::invalid_argument when
    /// frame_index does not exceed the previous one.
    void publish_frame(const ColorImage& color, const DepthImage& depth, std::uint64_t frame_index,
                       std::uint64_t timestamp_ns);

    /// Marks the region closed and wakes blocked readers. Idempotent; the
    /// destructor calls it before unmapping.
    void close();

private:
    std::unique_ptr<RegionMapping> mapping_;
    AttachmentInfo info_;
    FrameDescriptor desc_;
    std::string token_;
    bool stamp_checksum_;
    bool closed_ = false;
    std::uint64_t last_frame_index_ = 0;
};

std::unique_ptr<FrameWriter> create_region(const FrameDescriptor& desc, Transport transport,
                                           const RegionOptions& options = {});

enum class Wait { nonblocking, block_until_new };

struct ReaderStats {
    std::uint64_t snapshots = 0;
    std::uint64_t retries = 0;
    std::uint64_t max_retries_single = 0;
    std::uint64_t last_frame_index = 0;
};

class FrameReader {
public:
    FrameReader(std::unique_ptr<RegionMapping> mapping, AttachmentInfo info, FrameDescriptor desc);
    FrameReader(const FrameReader&) = delete;
    FrameReader& operator=(const FrameReader&) = delete;

    const FrameDescriptor& descriptor() const { return desc_; }
    const AttachmentInfo& info() const { return info_; }
    const ReaderStats& stats() const { return stats_; }

    /// Latest-wins acquisition. Returns std::nullopt when there is no frame
    /// newer than the last one this reader returned (nonblocking), or when
    /// `timeout` expires (block_until_new). Throws Errc::disconnected once the
    /// writer has closed the region or its process is gone.
    std::optional<FrameSnapshot> acquire_latest(
        Wait wait, std::chrono::milliseconds timeout = std::chrono::milliseconds::max());

    /// Same protocol, reusing the buffers of `out`. Returns false when no new
    /// frame was obtained.
    bool acquire_into(FrameSnapshot& out, Wait wait,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds::max());

    bool writer_alive() const;

private:
    bool try_copy(FrameSnapshot& out);

    std::unique_ptr<RegionMapping> mapping_;
    AttachmentInfo info_;
    FrameDescriptor desc_;
    ReaderStats stats_;
};

/// Throws Errc::attach_failed (bad/stale token) or Errc::incompatible_layout
/// (magic, version or size mismatch).
std::unique_ptr<FrameReader> attach_region(std::string_view token);

} // namespace splatbus::framebus
