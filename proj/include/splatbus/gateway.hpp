#pragma once

// Web gateway: reads frames from the bus like any other client and relays
// them to browsers over a WebSocket at /ws.
//
// Binary messages (little-endian):
//     [u32 frame_index][u64 timestamp_ns][u16 width][u16 height][u8 encoding][payload]
// Text messages carry the wire JSON schemas plus {"type":"status",...}.

#include "splatbus/client.hpp"
#include "splatbus/image.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatbus::gateway {

enum class Encoding : std::uint8_t {
    rgba8_raw = 0,
    png = 1,
    /// Optional depth preview, sent as its own packet right after the color
    /// packet of the same frame: width*height bytes, 255 = near, 0 = far.
    depth8 = 2,
};

std::string_view to_string(Encoding e);
std::optional<Encoding> parse_encoding(std::string_view s);

inline constexpr std::size_t kPacketHeaderBytes = 4 + 8 + 2 + 2 + 1;

struct WebFramePacket {
    std::uint32_t frame_index = 0;
    std::uint64_t timestamp_ns = 0;
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    Encoding encoding = Encoding::rgba8_raw;
    std::vector<std::uint8_t> payload;

    friend bool operator==(const WebFramePacket&, const WebFramePacket&) = default;
};

std::vector<std::uint8_t> encode_packet(const WebFramePacket& packet);
/// Throws Errc::malformed on short input, unknown encodings, or payload
/// lengths that disagree with the header (PNG payloads are decoded).
WebFramePacket decode_packet(std::span<const std::uint8_t> bytes);

/// sRGB transfer of a linear value in [0, 1], quantized round-half-up.
std::uint8_t linear_to_srgb8(double linear);

/// Un-premultiplies, clamps, applies the sRGB transfer and quantizes.
/// Pixels with zero coverage take the background color.
Rgba8Image tonemap_to_rgba8(const ColorImage& premultiplied, const Rgb& background);

/// 8-bit normalized depth: round(255 * (1 - z / vis_max)), clamped; 0 for
/// anything at or beyond vis_max (including the far sentinel).
std::vector<std::uint8_t> depth_preview(const DepthImage& depth, double vis_max);

/// Encodes one bus snapshot into the color packet and, if requested, the
/// depth preview packet.
std::vector<WebFramePacket> packets_for(const framebus::FrameSnapshot& snapshot, Encoding encoding,
                                        const Rgb& background, std::optional<double> depth_vis_max);

struct GatewayConfig {
    client::ConnectOptions upstream;
    std::string bind_address = "127.0.0.1";
    /// 0 picks an ephemeral port (see Gateway::port()).
    std::uint16_t listen_port = 8080;
    double target_fps_cap = 30.0;
    Encoding encoding = Encoding::png;
    Rgb background{};
    /// Send depth preview packets normalized to this distance.
    std::optional<double> depth_preview_max;
    /// Serve static files (the web viewer) from this directory.
    std::optional<std::filesystem::path> www_root;
    /// Frames superseded while a write is still in flight before the viewer
    /// is considered stalled and dropped.
    int viewer_frame_cap = 3;
    std::chrono::milliseconds initial_backoff{100};
    std::chrono::milliseconds max_backoff{2000};
};

struct GatewayCounters {
    std::uint64_t frames_read = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_superseded = 0;
    std::uint64_t viewers_connected = 0;
    std::uint64_t viewers_dropped = 0;
    std::uint64_t messages_forwarded = 0;
    std::uint64_t messages_rejected = 0;
    std::uint64_t telemetry_relayed = 0;
    std::uint64_t upstream_connects = 0;
};

class Gateway {
public:
    /// Binds the listener and starts the network and bus threads. The
    /// upstream server need not be running yet. Throws Errc::network_error.
    static std::unique_ptr<Gateway> start(const GatewayConfig& config);
    ~Gateway();

    std::uint16_t port() const;
    GatewayCounters counters() const;
    std::size_t viewer_count() const;
    bool upstream_connected() const;
    void stop();

    struct Impl;

private:
    explicit Gateway(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Runs a gateway until `stop` is set.
void serve_web(const GatewayConfig& config, const std::atomic<bool>& stop);

} // namespace splatbus::gateway
