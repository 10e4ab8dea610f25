#include "splatbus/client.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <thread>

namespace splatbus::client {

namespace {

using clock = std::chrono::steady_clock;

bool finite_all(std::span<const double> values)
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void check_rotation(const wire::Quat& q)
{
    if (!finite_all(q))
        throw Error(Errc::malformed_pose, "rotation has non-finite components");
    if (std::abs(wire::quat_norm(q) - 1.0) > wire::kQuaternionTolerance)
        throw Error(Errc::malformed_pose, "rotation is not a unit quaternion");
}

std::chrono::milliseconds left_until(clock::time_point deadline)
{
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
    return std::max(left, std::chrono::milliseconds(0));
}

} // namespace

void validate_camera(const wire::CameraPoseMsg& msg)
{
    if (!finite_all(msg.position))
        throw Error(Errc::malformed_pose, "camera position has non-finite components");
    check_rotation(msg.rotation);
    if (msg.fov_y_deg && !(*msg.fov_y_deg > 0.0 && *msg.fov_y_deg < 180.0))
        throw Error(Errc::malformed_pose, "fov_y_deg must lie in (0, 180)");
}

void validate_object(const wire::ObjectPoseMsg& msg)
{
    if (msg.object_id.empty())
        throw Error(Errc::malformed_pose, "object_id is empty");
    if (!finite_all(msg.position))
        throw Error(Errc::malformed_pose, "object position has non-finite components");
    check_rotation(msg.rotation);
    if (!std::isfinite(msg.scale) || msg.scale <= 0.0)
        throw Error(Errc::malformed_pose, "object scale must be positive");
}

// ---------------------------------------------------------------------------

std::unique_ptr<ClientSession> ClientSession::connect(const ConnectOptions& options)
{
    const auto deadline = clock::now() + options.timeout;
    std::unique_ptr<ClientSession> session(new ClientSession());

    session->init_stream_ = std::make_unique<net::MessageStream>(
        net::connect_tcp(options.host, options.init_port, options.timeout));
    session->init_stream_->send(wire::Hello{options.protocol_version, options.client_name});

    std::optional<wire::ControlMessage> reply;
    try {
        reply = session->init_stream_->receive(left_until(deadline));
    } catch (const Error& e) {
        if (e.code() == Errc::disconnected)
            throw Error(Errc::network_error, "server closed the init channel during the handshake");
        throw;
    }
    if (!reply)
        throw Error(Errc::timeout, "no init packet within the connect timeout");
    if (const auto* err = std::get_if<wire::ErrorMsg>(&*reply)) {
        if (err->code == wire::ErrorCode::version_mismatch)
            throw Error(Errc::version_mismatch, "server rejected the hello: " + err->detail);
        throw Error(Errc::network_error,
                    "server refused the connection (" + std::string(wire::to_string(err->code)) + "): " + err->detail);
    }
    const auto* init = std::get_if<wire::InitPacket>(&*reply);
    if (init == nullptr)
        throw Error(Errc::malformed, "expected init packet, got " + std::string(wire::type_tag(*reply)));
    session->init_ = *init;

    session->reader_ = framebus::attach_region(init->attachment_token);
    const auto& desc = session->reader_->descriptor();
    if (desc.width != init->width || desc.height != init->height || desc.color_pitch != init->color_pitch ||
        desc.depth_pitch != init->depth_pitch)
        throw Error(Errc::incompatible_layout, "frame region disagrees with the init packet");

    session->message_stream_ = std::make_unique<net::MessageStream>(
        net::connect_tcp(options.host, options.message_port, left_until(deadline)));
    session->message_stream_->send(wire::Hello{options.protocol_version, options.client_name});
    spdlog::debug("attached to {}x{} region over {}", init->width, init->height, wire::to_string(init->transport));
    return session;
}

std::optional<framebus::FrameSnapshot> ClientSession::grab_frame(framebus::Wait wait,
                                                                 std::chrono::milliseconds timeout)
{
    return reader_->acquire_latest(wait, timeout);
}

void ClientSession::send_camera(const wire::CameraPoseMsg& msg)
{
    validate_camera(msg);
    message_stream_->send(msg);
}

void ClientSession::send_object(const wire::ObjectPoseMsg& msg)
{
    validate_object(msg);
    message_stream_->send(msg);
}

void ClientSession::send_raw(std::string_view bytes)
{
    net::send_all(message_stream_->socket(), bytes);
}

std::optional<wire::ControlMessage> ClientSession::receive_message(std::chrono::milliseconds timeout)
{
    return message_stream_->receive(timeout);
}

std::optional<wire::TelemetryMsg> ClientSession::wait_for_series(const std::string& series,
                                                                 std::chrono::milliseconds timeout)
{
    const auto deadline = clock::now() + timeout;
    for (;;) {
        auto msg = message_stream_->receive(left_until(deadline));
        if (!msg)
            return std::nullopt;
        if (auto* t = std::get_if<wire::TelemetryMsg>(&*msg); t && t->series == series)
            return *t;
    }
}

std::optional<std::string> ClientSession::receive_payload(std::chrono::milliseconds timeout)
{
    return message_stream_->receive_payload(timeout);
}

void ClientSession::drain_messages()
{
    while (message_stream_->receive_payload(std::chrono::milliseconds(0))) {
    }
}

void ClientSession::shutdown()
{
    if (message_stream_)
        message_stream_->shutdown();
    if (init_stream_)
        init_stream_->shutdown();
}

void ClientSession::close()
{
    shutdown();
    message_stream_.reset();
    init_stream_.reset();
    reader_.reset();
}

// ---------------------------------------------------------------------------

std::string csv_row(const wire::TelemetryMsg& sample)
{
    return fmt::format("{},{:.17g},{:.17g}", sample.series, sample.t, sample.value);
}

std::uint64_t record_telemetry(ClientSession& session, std::ostream& out, const RecordOptions& options,
                               const std::atomic<bool>& stop)
{
    const bool bounded = options.duration.count() > 0;
    const auto deadline = clock::now() + options.duration;
    out << kCsvHeader << '\n';
    std::uint64_t rows = 0;
    while (!stop.load(std::memory_order_relaxed)) {
        if (bounded && clock::now() >= deadline)
            break;
        if (options.max_samples != 0 && rows >= options.max_samples)
            break;
        auto wait = std::chrono::milliseconds(100);
        if (bounded)
            wait = std::min(wait, left_until(deadline));
        auto msg = session.receive_message(wait);
        if (!msg)
            continue;
        if (const auto* t = std::get_if<wire::TelemetryMsg>(&*msg)) {
            out << csv_row(*t) << '\n';
            ++rows;
        }
    }
    out.flush();
    return rows;
}

// ---------------------------------------------------------------------------

std::vector<PoseCommand> parse_pose_script(std::istream& in)
{
    std::vector<PoseCommand> script;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        try {
            auto msg = wire::parse_message(line);
            if (auto* c = std::get_if<wire::CameraPoseMsg>(&msg)) {
                validate_camera(*c);
                script.emplace_back(*c);
            } else if (auto* o = std::get_if<wire::ObjectPoseMsg>(&msg)) {
                validate_object(*o);
                script.emplace_back(*o);
            } else {
                throw Error(Errc::malformed, "expected camera_pose or object_pose");
            }
        } catch (const Error& e) {
            throw Error(Errc::parse_error, "pose script line " + std::to_string(number) + ": " + e.what());
        }
    }
    return script;
}

std::vector<PoseCommand> load_pose_script(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::io_error, "cannot open " + path.string());
    return parse_pose_script(in);
}

std::vector<ReplayRecord> replay_poses(ClientSession& session, const std::vector<PoseCommand>& script,
                                       const ReplayOptions& options, const std::atomic<bool>& stop)
{
    std::vector<ReplayRecord> records;
    const auto period = options.rate_hz > 0.0
                            ? std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / options.rate_hz))
                            : clock::duration::zero();
    if (options.sync)
        session.drain_messages();
    auto next = clock::now();
    for (std::size_t i = 0; i < script.size() && !stop.load(std::memory_order_relaxed); ++i) {
        const bool is_camera = std::holds_alternative<wire::CameraPoseMsg>(script[i]);
        if (is_camera)
            session.send_camera(std::get<wire::CameraPoseMsg>(script[i]));
        else
            session.send_object(std::get<wire::ObjectPoseMsg>(script[i]));

        ReplayRecord rec;
        rec.step = i;
        if (options.sync) {
            const auto applied = session.wait_for_series(is_camera ? "camera_frame" : "object_frame", options.step_timeout);
            if (!applied)
                throw Error(Errc::timeout, "pose " + std::to_string(i) + " was not acknowledged");
            const auto target = static_cast<std::uint64_t>(applied->value);
            const auto deadline = clock::now() + options.step_timeout;
            std::optional<framebus::FrameSnapshot> snap;
            // The reader may already hold a frame at or past target.
            if (session.reader().stats().last_frame_index < target) {
                do {
                    snap = session.grab_frame(framebus::Wait::block_until_new, left_until(deadline));
                    if (!snap)
                        throw Error(Errc::timeout, "frame " + std::to_string(target) + " never arrived");
                } while (snap->frame_index < target);
            } else {
                throw Error(Errc::timeout, "frame " + std::to_string(target) + " was already superseded");
            }
            if (snap->frame_index != target)
                spdlog::warn("pose {}: expected frame {}, observed {}", i, target, snap->frame_index);
            rec.frame_index = snap->frame_index;
            rec.checksum = framebus::frame_checksum(snap->color, snap->depth);
        }
        records.push_back(rec);

        if (period > clock::duration::zero()) {
            next += period;
            if (next > clock::now())
                std::this_thread::sleep_until(next);
            else
                next = clock::now();
        }
    }
    return records;
}

// ---------------------------------------------------------------------------

BenchResult summarize_latencies(std::vector<double> latencies_ms)
{
    BenchResult r;
    r.frames = latencies_ms.size();
    if (latencies_ms.empty())
        return r;
    std::sort(latencies_ms.begin(), latencies_ms.end());
    const auto pct = [&](double p) {
        const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(latencies_ms.size()))) - 1;
        return latencies_ms[std::min(idx, latencies_ms.size() - 1)];
    };
    double sum = 0.0;
    for (double v : latencies_ms)
        sum += v;
    r.mean_ms = sum / static_cast<double>(latencies_ms.size());
    r.p50_ms = pct(0.50);
    r.p95_ms = pct(0.95);
    r.p99_ms = pct(0.99);
    r.max_ms = latencies_ms.back();
    return r;
}

BenchResult bench(ClientSession& session, std::uint64_t frames, std::chrono::milliseconds timeout)
{
    std::vector<double> latencies;
    latencies.reserve(frames);
    framebus::FrameSnapshot snap;
    const auto retries_before = session.reader().stats().retries;
    while (latencies.size() < frames) {
        if (!session.reader().acquire_into(snap, framebus::Wait::block_until_new, timeout))
            throw Error(Errc::timeout, "no frame within the bench timeout");
        const std::uint64_t now = framebus::monotonic_ns();
        latencies.push_back(static_cast<double>(now - std::min(now, snap.timestamp_ns)) / 1e6);
    }
    BenchResult r = summarize_latencies(std::move(latencies));
    r.torn_retries = session.reader().stats().retries - retries_before;
    return r;
}

} // namespace splatbus::client
