#pragma once

// Client side of the protocol: handshake, frame attachment, pose sending and
// telemetry. Used by the splatbus-client tool, the gateway and the tests.

#include "splatbus/framebus.hpp"
#include "splatbus/net.hpp"
#include "splatbus/wire.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace splatbus::client {

struct ConnectOptions {
    std::string host = "127.0.0.1";
    std::uint16_t init_port = 7420;
    std::uint16_t message_port = 7421;
    std::string client_name = "splatbus-client";
    int protocol_version = wire::kProtocolVersion;
    std::chrono::milliseconds timeout{5000};
};

class ClientSession {
public:
    /// Handshake on the init channel, attach the frame region, then open the
    /// message channel. Throws Errc::network_error (server unreachable),
    /// Errc::version_mismatch (server refused the hello), Errc::attach_failed
    /// or Errc::incompatible_layout (region), Errc::timeout.
    static std::unique_ptr<ClientSession> connect(const ConnectOptions& options);

    const wire::InitPacket& init() const { return init_; }
    framebus::FrameReader& reader() { return *reader_; }

    std::optional<framebus::FrameSnapshot> grab_frame(framebus::Wait wait = framebus::Wait::block_until_new,
                                                      std::chrono::milliseconds timeout = std::chrono::seconds(5));

    /// Validate locally (finite fields, unit quaternion) and send. Throws
    /// Errc::malformed_pose without touching the socket.
    void send_camera(const wire::CameraPoseMsg& msg);
    void send_object(const wire::ObjectPoseMsg& msg);

    /// Writes bytes verbatim on the message channel.
    void send_raw(std::string_view bytes);

    /// Next message from the server on the message channel, or nullopt on
    /// timeout. Throws Errc::disconnected.
    std::optional<wire::ControlMessage> receive_message(std::chrono::milliseconds timeout);

    /// Waits for a telemetry sample of `series`, discarding other messages.
    std::optional<wire::TelemetryMsg> wait_for_series(const std::string& series, std::chrono::milliseconds timeout);

    /// Raw JSON payload variant of receive_message.
    std::optional<std::string> receive_payload(std::chrono::milliseconds timeout);

    /// Discards everything already buffered on the message channel.
    void drain_messages();

    /// Shuts both sockets down so that threads blocked in receive wake up
    /// with Errc::disconnected; the session stays allocated.
    void shutdown();
    void close();

private:
    ClientSession() = default;

    wire::InitPacket init_;
    std::unique_ptr<net::MessageStream> init_stream_;
    std::unique_ptr<net::MessageStream> message_stream_;
    std::unique_ptr<framebus::FrameReader> reader_;
};

/// Throws Errc::malformed_pose.
void validate_camera(const wire::CameraPoseMsg& msg);
void validate_object(const wire::ObjectPoseMsg& msg);

// ---------------------------------------------------------------------------
// Telemetry

/// "series,t,value" with round-trip precision.
std::string csv_row(const wire::TelemetryMsg& sample);
inline constexpr const char* kCsvHeader = "series,t,value";

struct RecordOptions {
    std::chrono::milliseconds duration{0}; ///< 0 = until stopped
    std::uint64_t max_samples = 0;         ///< 0 = unlimited
};

/// Writes the header and one row per telemetry message. Returns the number
/// of rows written.
std::uint64_t record_telemetry(ClientSession& session, std::ostream& out, const RecordOptions& options,
                               const std::atomic<bool>& stop);

// ---------------------------------------------------------------------------
// Pose scripts

using PoseCommand = std::variant<wire::CameraPoseMsg, wire::ObjectPoseMsg>;

/// One camera_pose or object_pose message per line; blank lines and lines
/// starting with '#' are skipped. Throws Errc::parse_error with the line number.
std::vector<PoseCommand> parse_pose_script(std::istream& in);
std::vector<PoseCommand> load_pose_script(const std::filesystem::path& path);

struct ReplayOptions {
    double rate_hz = 30.0;
    /// Wait for the frame that reflects each pose before sending the next
    /// and record its checksum.
    bool sync = false;
    std::chrono::milliseconds step_timeout{5000};
};

struct ReplayRecord {
    std::size_t step = 0;
    std::uint64_t frame_index = 0; ///< 0 when not synchronised
    std::uint64_t checksum = 0;
};

std::vector<ReplayRecord> replay_poses(ClientSession& session, const std::vector<PoseCommand>& script,
                                       const ReplayOptions& options, const std::atomic<bool>& stop);

// ---------------------------------------------------------------------------
// Latency

struct BenchResult {
    std::uint64_t frames = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
    std::uint64_t torn_retries = 0;
};

/// Publish-to-acquire latency: monotonic time at acquisition minus the
/// frame's publish timestamp.
BenchResult bench(ClientSession& session, std::uint64_t frames, std::chrono::milliseconds timeout);
BenchResult summarize_latencies(std::vector<double> latencies_ms);

} // namespace splatbus::client
