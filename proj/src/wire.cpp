#include "splatbus/wire.hpp"

#include "splatbus/base64.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace splatbus::wire {

using Json = nlohmann::ordered_json;

namespace {

// JSON nesting deeper than this is rejected before handing the text to the
// recursive-descent parser.
constexpr int kMaxNesting = 32;

bool nesting_within_limit(std::string_view text)
{
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (const char c : text) {
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{' || c == '[') {
            if (++depth > kMaxNesting)
                return false;
        } else if (c == '}' || c == ']') {
            --depth;
        }
    }
    return true;
}

[[noreturn]] void malformed(const std::string& what)
{
    throw Error(Errc::malformed, what);
}

const Json& require(const Json& obj, const char* key)
{
    const auto it = obj.find(key);
    if (it == obj.end())
        malformed(std::string("missing field '") + key + "'");
    return *it;
}

double get_finite(const Json& obj, const char* key)
{
    const Json& v = require(obj, key);
    if (!v.is_number())
        malformed(std::string("field '") + key + "' is not a number");
    const double d = v.get<double>();
    if (!std::isfinite(d))
        malformed(std::string("field '") + key + "' is not finite");
    return d;
}

std::uint64_t get_unsigned(const Json& obj, const char* key, std::uint64_t max)
{
    const Json& v = require(obj, key);
    if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > max)
            malformed(std::string("field '") + key + "' out of range");
        return u;
    }
    if (v.is_number_integer())
        malformed(std::string("field '") + key + "' is negative");
    malformed(std::string("field '") + key + "' is not an unsigned integer");
}

std::string get_string(const Json& obj, const char* key)
{
    const Json& v = require(obj, key);
    if (!v.is_string())
        malformed(std::string("field '") + key + "' is not a string");
    return v.get<std::string>();
}

template <std::size_t N>
std::array<double, N> get_vector(const Json& obj, const char* key)
{
    const Json& v = require(obj, key);
    if (!v.is_array() || v.size() != N)
        malformed(std::string("field '") + key + "' must be an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!v[i].is_number())
            malformed(std::string("field '") + key + "' has a non-numeric element");
        out[i] = v[i].get<double>();
        if (!std::isfinite(out[i]))
            malformed(std::string("field '") + key + "' has a non-finite element");
    }
    return out;
}

Quat get_rotation(const Json& obj)
{
    const Quat q = get_vector<4>(obj, "rotation");
    if (std::abs(quat_norm(q) - 1.0) > kQuaternionTolerance)
        malformed("rotation quaternion is not unit length");
    return q;
}

Convention get_convention(const Json& obj)
{
    const auto c = parse_convention(get_string(obj, "convention"));
    if (!c)
        malformed("unknown convention");
    return *c;
}

Hello parse_hello(const Json& j)
{
    Hello m;
    const Json& v = require(j, "protocol_version");
    if (!v.is_number_integer())
        malformed("protocol_version is not an integer");
    const auto version = v.get<std::int64_t>();
    if (version < 1 || version > std::numeric_limits<int>::max())
        malformed("protocol_version out of range");
    m.protocol_version = static_cast<int>(version);
    m.client_name = get_string(j, "client_name");
    return m;
}

InitPacket parse_init(const Json& j)
{
    InitPacket m;
    m.width = static_cast<std::uint32_t>(get_unsigned(j, "width", std::numeric_limits<std::uint32_t>::max()));
    m.height = static_cast<std::uint32_t>(get_unsigned(j, "height", std::numeric_limits<std::uint32_t>::max()));
    if (m.width == 0 || m.height == 0)
        malformed("width and height must be positive");
    m.color_format = get_string(j, "color_format");
    m.depth_format = get_string(j, "depth_format");
    if (m.color_format != "rgba32f" || m.depth_format != "r32f")
        malformed("unknown pixel format");
    const auto max64 = std::numeric_limits<std::uint64_t>::max();
    m.color_pitch = get_unsigned(j, "color_pitch", max64);
    m.depth_pitch = get_unsigned(j, "depth_pitch", max64);
    if (m.color_pitch < std::uint64_t{m.width} * 16 || m.depth_pitch < std::uint64_t{m.width} * 4)
        malformed("pitch smaller than row size");
    const auto t = parse_transport(get_string(j, "transport"));
    if (!t)
        malformed("unknown transport");
    m.transport = *t;
    m.attachment_token = get_string(j, "attachment_token");
    try {
        (void)base64::decode(m.attachment_token);
    } catch (const Error&) {
        malformed("attachment_token is not valid base64");
    }
    m.frame_region_bytes = get_unsigned(j, "frame_region_bytes", max64);
    return m;
}

CameraPoseMsg parse_camera(const Json& j)
{
    CameraPoseMsg m;
    m.position = get_vector<3>(j, "position");
    m.rotation = get_rotation(j);
    m.convention = get_convention(j);
    if (const auto it = j.find("fov_y_deg"); it != j.end() && !it->is_null()) {
        const double fov = get_finite(j, "fov_y_deg");
        if (!(fov > 0.0 && fov < 180.0))
            malformed("fov_y_deg must lie in (0, 180)");
        m.fov_y_deg = fov;
    }
    return m;
}

ObjectPoseMsg parse_object(const Json& j)
{
    ObjectPoseMsg m;
    m.object_id = get_string(j, "object_id");
    m.position = get_vector<3>(j, "position");
    m.rotation = get_rotation(j);
    m.scale = get_finite(j, "scale");
    if (!(m.scale > 0.0))
        malformed("scale must be positive");
    m.convention = get_convention(j);
    return m;
}

TelemetryMsg parse_telemetry(const Json& j)
{
    TelemetryMsg m;
    m.series = get_string(j, "series");
    m.t = get_finite(j, "t");
    m.value = get_finite(j, "value");
    return m;
}

ErrorMsg parse_error_msg(const Json& j)
{
    ErrorMsg m;
    const auto code = parse_error_code(get_string(j, "code"));
    if (!code)
        malformed("unknown error code");
    m.code = *code;
    m.detail = get_string(j, "detail");
    return m;
}

void require_finite(double v, const char* field)
{
    if (!std::isfinite(v))
        throw Error(Errc::serialization, std::string("non-finite value in '") + field + "'");
}

template <std::size_t N>
Json vector_json(const std::array<double, N>& v, const char* field)
{
    Json arr = Json::array();
    for (double d : v) {
        require_finite(d, field);
        arr.push_back(d);
    }
    return arr;
}

bool approx(double a, double b, double rel_tol)
{
    if (a == b)
        return true;
    return std::abs(a - b) <= rel_tol * std::max(std::abs(a), std::abs(b));
}

template <std::size_t N>
bool approx(const std::array<double, N>& a, const std::array<double, N>& b, double rel_tol)
{
    for (std::size_t i = 0; i < N; ++i)
        if (!approx(a[i], b[i], rel_tol))
            return false;
    return true;
}

} // namespace

std::string_view to_string(Convention c)
{
    return c == Convention::unity_lh_yup ? "unity_lh_yup" : "gs_rh_ydown";
}

std::string_view to_string(Transport t)
{
    return t == Transport::shared_memory ? "shared_memory" : "inprocess";
}

std::string_view to_string(ErrorCode c)
{
    switch (c) {
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::malformed: return "malformed";
    case ErrorCode::oversize: return "oversize";
    case ErrorCode::unsupported: return "unsupported";
    }
    return "malformed";
}

std::optional<Convention> parse_convention(std::string_view s)
{
    if (s == "unity_lh_yup")
        return Convention::unity_lh_yup;
    if (s == "gs_rh_ydown")
        return Convention::gs_rh_ydown;
    return std::nullopt;
}

std::optional<Transport> parse_transport(std::string_view s)
{
    if (s == "shared_memory")
        return Transport::shared_memory;
    if (s == "inprocess")
        return Transport::inprocess;
    return std::nullopt;
}

std::optional<ErrorCode> parse_error_code(std::string_view s)
{
    for (auto c : {ErrorCode::version_mismatch, ErrorCode::malformed, ErrorCode::oversize, ErrorCode::unsupported})
        if (to_string(c) == s)
            return c;
    return std::nullopt;
}

std::string_view type_tag(const ControlMessage& msg)
{
    static constexpr std::string_view tags[] = {"hello", "init", "camera_pose", "object_pose", "telemetry", "error"};
    return tags[msg.index()];
}

double quat_norm(const Quat& q)
{
    return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
}

// ---------------------------------------------------------------------------

std::size_t MemorySource::read(std::span<std::uint8_t> out)
{
    const std::size_t n = std::min(out.size(), bytes_.size() - pos_);
    if (n > 0)
        std::memcpy(out.data(), bytes_.data() + pos_, n);
    pos_ += n;
    return n;
}

std::string encode_envelope(std::string_view payload)
{
    if (payload.size() > kMaxPayloadBytes)
        throw Error(Errc::oversize, "payload of " + std::to_string(payload.size()) + " bytes exceeds cap");
    const auto n = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(kHeaderBytes + payload.size());
    out.push_back(static_cast<char>((n >> 24) & 0xFF));
    out.push_back(static_cast<char>((n >> 16) & 0xFF));
    out.push_back(static_cast<char>((n >> 8) & 0xFF));
    out.push_back(static_cast<char>(n & 0xFF));
    out.append(payload);
    return out;
}

namespace {

void read_exact(ByteSource& source, std::span<std::uint8_t> out)
{
    std::size_t got = 0;
    while (got < out.size()) {
        const std::size_t n = source.read(out.subspan(got));
        if (n == 0)
            throw Error(Errc::incomplete_frame,
                        "stream ended after " + std::to_string(got) + " of " + std::to_string(out.size()) + " bytes");
        got += n;
    }
}

std::uint32_t load_be32(const std::uint8_t* p)
{
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

} // namespace

Envelope decode_envelope(ByteSource& source)
{
    std::array<std::uint8_t, kHeaderBytes> header{};
    read_exact(source, header);
    const std::uint32_t length = load_be32(header.data());
    if (length > kMaxPayloadBytes)
        throw Error(Errc::oversize, "declared length " + std::to_string(length) + " exceeds cap");
    Envelope env;
    env.length = length;
    env.payload.resize(length);
    read_exact(source, std::span(reinterpret_cast<std::uint8_t*>(env.payload.data()), length));
    return env;
}

void EnvelopeDecoder::feed(std::span<const std::uint8_t> bytes)
{
    if (failed_)
        return;
    if (offset_ > 0 && offset_ == buffer_.size()) {
        buffer_.clear();
        offset_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<std::string> EnvelopeDecoder::next()
{
    if (failed_)
        throw Error(Errc::oversize, "decoder failed on an oversize frame");
    const std::size_t avail = buffer_.size() - offset_;
    if (avail < kHeaderBytes)
        return std::nullopt;
    const std::uint32_t length = load_be32(buffer_.data() + offset_);
    if (length > kMaxPayloadBytes) {
        failed_ = true;
        buffer_.clear();
        offset_ = 0;
        throw Error(Errc::oversize, "declared length " + std::to_string(length) + " exceeds cap");
    }
    if (avail < kHeaderBytes + length)
        return std::nullopt;
    const auto* start = reinterpret_cast<const char*>(buffer_.data() + offset_ + kHeaderBytes);
    std::string payload(start, length);
    offset_ += kHeaderBytes + length;
    // Compact once the consumed prefix dominates the buffer.
    if (offset_ > 65536 && offset_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
        offset_ = 0;
    }
    return payload;
}

// ---------------------------------------------------------------------------

ControlMessage parse_message(std::string_view payload)
{
    if (!nesting_within_limit(payload))
        malformed("JSON nesting too deep");
    Json j;
    try {
        j = Json::parse(payload.begin(), payload.end(), nullptr, /*allow_exceptions=*/false);
    } catch (const std::exception& e) {
        malformed(e.what());
    }
    if (j.is_discarded())
        malformed("payload is not valid JSON");
    if (!j.is_object())
        malformed("payload is not a JSON object");
    const std::string type = get_string(j, "type");
    try {
        if (type == "hello")
            return parse_hello(j);
        if (type == "init")
            return parse_init(j);
        if (type == "camera_pose")
            return parse_camera(j);
        if (type == "object_pose")
            return parse_object(j);
        if (type == "telemetry")
            return parse_telemetry(j);
        if (type == "error")
            return parse_error_msg(j);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        malformed(e.what());
    }
    throw Error(Errc::unsupported, "unknown message type '" + type + "'");
}

std::string serialize_message(const ControlMessage& msg)
{
    Json j;
    j["type"] = std::string(type_tag(msg));
    std::visit(
        [&j](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Hello>) {
                j["protocol_version"] = m.protocol_version;
                j["client_name"] = m.client_name;
            } else if constexpr (std::is_same_v<T, InitPacket>) {
                j["width"] = m.width;
                j["height"] = m.height;
                j["color_format"] = m.color_format;
                j["depth_format"] = m.depth_format;
                j["color_pitch"] = m.color_pitch;
                j["depth_pitch"] = m.depth_pitch;
                j["transport"] = std::string(to_string(m.transport));
                j["attachment_token"] = m.attachment_token;
                j["frame_region_bytes"] = m.frame_region_bytes;
            } else if constexpr (std::is_same_v<T, CameraPoseMsg>) {
                j["position"] = vector_json(m.position, "position");
                j["rotation"] = vector_json(m.rotation, "rotation");
                j["convention"] = std::string(to_string(m.convention));
                if (m.fov_y_deg) {
                    require_finite(*m.fov_y_deg, "fov_y_deg");
                    j["fov_y_deg"] = *m.fov_y_deg;
                }
            } else if constexpr (std::is_same_v<T, ObjectPoseMsg>) {
                j["object_id"] = m.object_id;
                j["position"] = vector_json(m.position, "position");
                j["rotation"] = vector_json(m.rotation, "rotation");
                require_finite(m.scale, "scale");
                j["scale"] = m.scale;
                j["convention"] = std::string(to_string(m.convention));
            } else if constexpr (std::is_same_v<T, TelemetryMsg>) {
                require_finite(m.t, "t");
                require_finite(m.value, "value");
                j["series"] = m.series;
                j["t"] = m.t;
                j["value"] = m.value;
            } else if constexpr (std::is_same_v<T, ErrorMsg>) {
                j["code"] = std::string(to_string(m.code));
                j["detail"] = m.detail;
            }
        },
        msg);
    try {
        return j.dump(-1, ' ', false, Json::error_handler_t::replace);
    } catch (const std::exception& e) {
        throw Error(Errc::serialization, e.what());
    }
}

std::string frame_message(const ControlMessage& msg)
{
    return encode_envelope(serialize_message(msg));
}

bool approx_equal(const ControlMessage& a, const ControlMessage& b, double rel_tol)
{
    if (a.index() != b.index())
        return false;
    return std::visit(
        [&](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b);
            if constexpr (std::is_same_v<T, CameraPoseMsg>) {
                if (x.fov_y_deg.has_value() != y.fov_y_deg.has_value())
                    return false;
                if (x.fov_y_deg && !approx(*x.fov_y_deg, *y.fov_y_deg, rel_tol))
                    return false;
                return x.convention == y.convention && approx(x.position, y.position, rel_tol) &&
                       approx(x.rotation, y.rotation, rel_tol);
            } else if constexpr (std::is_same_v<T, ObjectPoseMsg>) {
                return x.object_id == y.object_id && x.convention == y.convention &&
                       approx(x.position, y.position, rel_tol) && approx(x.rotation, y.rotation, rel_tol) &&
                       approx(x.scale, y.scale, rel_tol);
            } else if constexpr (std::is_same_v<T, TelemetryMsg>) {
                return x.series == y.series && approx(x.t, y.t, rel_tol) && approx(x.value, y.value, rel_tol);
            } else {
                return x == y;
            }
        },
        a);
}

} // namespace splatbus::wire
