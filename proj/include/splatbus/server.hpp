#pragma once

// Embeddable render server. The embedding loop calls, once per frame:
//
//     auto summary = server->poll_messages();   // apply client poses
//     ... render with server->scene().camera ...
//     server->publish(color, invdepth);         // hand the frame to clients
//
// Networking runs on an internal thread; the loop never blocks on clients.

#include "splatbus/framebus.hpp"
#include "splatbus/geometry.hpp"
#include "splatbus/wire.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace splatbus::server {

inline constexpr std::uint16_t kDefaultInitPort = 7420;
inline constexpr std::uint16_t kDefaultMessagePort = 7421;

struct ServerConfig {
    int width = 640;
    int height = 480;
    std::string bind_address = "127.0.0.1";
    /// 0 picks an ephemeral port (see Server::init_port()).
    std::uint16_t init_port = kDefaultInitPort;
    std::uint16_t message_port = kDefaultMessagePort;
    wire::Transport transport = wire::Transport::shared_memory;
    double far_sentinel = geometry::kDefaultFarSentinel;
    double default_fov_y_deg = geometry::kDefaultFovYDeg;
    int max_clients = 8;
    std::optional<std::filesystem::path> asset_path;
    /// Explicit frame-region name; generated when empty.
    std::string region_name;
    /// Stamp per-frame checksums into the region header.
    bool stamp_checksum = false;
    std::chrono::milliseconds inactivity_timeout{10'000};

    /// Throws Errc::invalid_argument.
    void validate() const;
};

struct ObjectState {
    geometry::Pose pose;
    double scale = 1.0;
};

struct SceneState {
    geometry::ViewState camera;
    std::map<std::string, ObjectState> objects;
    std::map<std::uint64_t, std::chrono::steady_clock::time_point> last_message_time;
};

struct PollSummary {
    std::size_t camera_messages = 0;
    bool camera_applied = false;
    std::size_t object_messages = 0;
    std::size_t objects_applied = 0;
    std::size_t telemetry_messages = 0;
    std::size_t malformed = 0;
};

struct ServerCounters {
    std::uint64_t malformed_total = 0;
    std::uint64_t dropped_messages = 0;
    std::uint64_t init_connections = 0;
    std::uint64_t message_connections = 0;
    std::uint64_t refused_connections = 0;
    std::uint64_t reaped_connections = 0;
};

class Server {
public:
    /// Creates the frame region and starts listening on both channels.
    /// Throws Errc::network_error when a port is unavailable and the
    /// framebus errors when the region cannot be created.
    static std::unique_ptr<Server> start(const ServerConfig& config);

    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Drains pending messages. Camera updates are latest-wins, object poses
    /// latest-wins per object_id; malformed input only bumps counters.
    PollSummary poll_messages();

    /// Converts inverse depth to linear depth and publishes the next frame.
    /// Throws Errc::dimension_mismatch.
    void publish(const ColorImage& color, const DepthImage& invdepth);

    /// Queues a telemetry sample for every message-channel client;
    /// t is seconds since the server started.
    void send_telemetry(const std::string& series, double value);

    const SceneState& scene() const { return scene_; }
    const ServerConfig& config() const { return config_; }
    double fov_y() const { return scene_.camera.fov_y; }

    std::uint16_t init_port() const;
    std::uint16_t message_port() const;
    wire::InitPacket init_packet() const;
    const framebus::FrameWriter& writer() const { return *writer_; }

    std::uint64_t frame_index() const { return frame_index_; }
    /// Checksum of the planes last published (after depth conversion).
    std::uint64_t last_checksum() const { return last_checksum_; }
    ServerCounters counters() const;
    double seconds_since_start() const;

    /// Stops networking, closes every client connection, and tears down the
    /// frame region. Called by the destructor.
    void stop();

private:
    struct Impl;
    explicit Server(const ServerConfig& config);

    ServerConfig config_;
    SceneState scene_;
    std::unique_ptr<framebus::FrameWriter> writer_;
    std::unique_ptr<Impl> impl_;
    std::uint64_t frame_index_ = 0;
    std::uint64_t last_checksum_ = 0;
};

// ---------------------------------------------------------------------------

struct DemoOptions {
    double target_fps = 60.0;
    /// Stop after this many frames; 0 runs until `stop` is set.
    std::uint64_t max_frames = 0;
    /// Called once the server is listening.
    std::function<void(Server&)> on_started;
    /// Called after every publish with the frame index and plane checksum.
    std::function<void(const Server&, std::uint64_t, std::uint64_t)> on_frame;
};

/// Identifier of the object the demo moves as a whole.
inline constexpr const char* kDemoObjectId = "scene";

/// Canonical integration: poll, transform, rasterize, publish, repeat.
/// Uses the PLY in config.asset_path or the built-in three-Gaussian scene.
/// Emits telemetry series fps, render_ms, camera_messages and
/// camera_frame (the frame index at which a camera update took effect).
void run_demo(const ServerConfig& config, const DemoOptions& options, const std::atomic<bool>& stop);

} // namespace splatbus::server
