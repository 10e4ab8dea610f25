#pragma once

// Framing and message schemas shared by the init channel and the message
// channel. Every message travels as [u32 big-endian length][UTF-8 JSON object].

#include "splatbus/error.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace splatbus::wire {

inline constexpr std::uint32_t kMaxPayloadBytes = 16u * 1024u * 1024u;
inline constexpr std::size_t kHeaderBytes = 4;
inline constexpr int kProtocolVersion = 1;
inline constexpr double kQuaternionTolerance = 1e-4;

enum class Convention { unity_lh_yup, gs_rh_ydown };
enum class Transport { shared_memory, inprocess };
enum class ErrorCode { version_mismatch, malformed, oversize, unsupported };

std::string_view to_string(Convention c);
std::string_view to_string(Transport t);
std::string_view to_string(ErrorCode c);
std::optional<Convention> parse_convention(std::string_view s);
std::optional<Transport> parse_transport(std::string_view s);
std::optional<ErrorCode> parse_error_code(std::string_view s);

using Vec3 = std::array<double, 3>;
/// Quaternion stored as (x, y, z, w).
using Quat = std::array<double, 4>;

inline constexpr Quat kIdentityQuat{0.0, 0.0, 0.0, 1.0};

struct Envelope {
    std::uint32_t length = 0;
    std::string payload;
    friend bool operator==(const Envelope&, const Envelope&) = default;
};

struct Hello {
    int protocol_version = kProtocolVersion;
    std::string client_name;
    friend bool operator==(const Hello&, const Hello&) = default;
};

struct InitPacket {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::string color_format = "rgba32f";
    std::string depth_format = "r32f";
    std::uint64_t color_pitch = 0;
    std::uint64_t depth_pitch = 0;
    Transport transport = Transport::shared_memory;
    std::string attachment_token;
    std::uint64_t frame_region_bytes = 0;
    friend bool operator==(const InitPacket&, const InitPacket&) = default;
};

struct CameraPoseMsg {
    Vec3 position{};
    Quat rotation = kIdentityQuat;
    Convention convention = Convention::unity_lh_yup;
    std::optional<double> fov_y_deg;
    friend bool operator==(const CameraPoseMsg&, const CameraPoseMsg&) = default;
};

struct ObjectPoseMsg {
    std::string object_id;
    Vec3 position{};
    Quat rotation = kIdentityQuat;
    double scale = 1.0;
    Convention convention = Convention::unity_lh_yup;
    friend bool operator==(const ObjectPoseMsg&, const ObjectPoseMsg&) = default;
};

struct TelemetryMsg {
    std::string series;
    double t = 0.0;
    double value = 0.0;
    friend bool operator==(const TelemetryMsg&, const TelemetryMsg&) = default;
};

struct ErrorMsg {
    ErrorCode code = ErrorCode::malformed;
    std::string detail;
    friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

using ControlMessage =
    std::variant<Hello, InitPacket, CameraPoseMsg, ObjectPoseMsg, TelemetryMsg, ErrorMsg>;

std::string_view type_tag(const ControlMessage& msg);

// ---------------------------------------------------------------------------
// Framing

/// Pull-style byte source. `read` returns the number of bytes placed in
/// `out` (at most out.size()); zero means end of stream.
class ByteSource {
public:
    virtual ~ByteSource() = default;
    virtual std::size_t read(std::span<std::uint8_t> out) = 0;
};

/// ByteSource over an in-memory buffer; tracks how many bytes were consumed.
class MemorySource : public ByteSource {
public:
    explicit MemorySource(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    explicit MemorySource(std::string_view bytes)
        : bytes_(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size())
    {
    }

    std::size_t read(std::span<std::uint8_t> out) override;
    std::size_t consumed() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// Throws Error(Errc::oversize) when payload exceeds kMaxPayloadBytes.
std::string encode_envelope(std::string_view payload);

/// Reads exactly one frame. Throws Errc::incomplete_frame on a short stream
/// and Errc::oversize when the declared length exceeds the cap (nothing past
/// the 4-byte header is consumed in that case; the connection must be closed).
Envelope decode_envelope(ByteSource& source);

/// Incremental decoder for non-blocking sockets: feed arbitrary chunks, pop
/// complete payloads. After an oversize header it enters a failed state.
class EnvelopeDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    void feed(std::string_view bytes)
    {
        feed(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    }

    /// Next complete payload, if any. Throws Errc::oversize once failed.
    std::optional<std::string> next();

    bool failed() const { return failed_; }
    std::size_t buffered() const { return buffer_.size() - offset_; }

private:
    std::vector<std::uint8_t> buffer_;
    std::size_t offset_ = 0;
    bool failed_ = false;
};

// ---------------------------------------------------------------------------
// Schemas

/// Parses and validates one payload. Unknown "type" values throw
/// Errc::unsupported; any other schema or invariant violation throws
/// Errc::malformed. Never throws anything but splatbus::Error.
ControlMessage parse_message(std::string_view payload);

/// Compact JSON with round-trip precision for doubles. Throws
/// Errc::serialization for non-finite numeric fields.
std::string serialize_message(const ControlMessage& msg);

/// serialize_message followed by encode_envelope.
std::string frame_message(const ControlMessage& msg);

/// Structural equality with a relative tolerance on floating-point fields.
bool approx_equal(const ControlMessage& a, const ControlMessage& b, double rel_tol = 1e-12);

double quat_norm(const Quat& q);

} // namespace splatbus::wire
