#include "splatbus/gateway.hpp"

#include "splatbus/imageio.hpp"

#include <spdlog/spdlog.h>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

namespace splatbus::gateway {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using clock = std::chrono::steady_clock;

std::string_view to_string(Encoding e)
{
    switch (e) {
    case Encoding::rgba8_raw: return "rgba8_raw";
    case Encoding::png: return "png";
    case Encoding::depth8: return "depth8";
    }
    return "unknown";
}

std::optional<Encoding> parse_encoding(std::string_view s)
{
    if (s == "rgba8_raw")
        return Encoding::rgba8_raw;
    if (s == "png")
        return Encoding::png;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Packets

namespace {

template<typename T>
void put_le(std::vector<std::uint8_t>& out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

template<typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace

std::vector<std::uint8_t> encode_packet(const WebFramePacket& packet)
{
    std::vector<std::uint8_t> out;
    out.reserve(kPacketHeaderBytes + packet.payload.size());
    put_le(out, packet.frame_index);
    put_le(out, packet.timestamp_ns);
    put_le(out, packet.width);
    put_le(out, packet.height);
    out.push_back(static_cast<std::uint8_t>(packet.encoding));
    out.insert(out.end(), packet.payload.begin(), packet.payload.end());
    return out;
}

WebFramePacket decode_packet(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kPacketHeaderBytes)
        throw Error(Errc::malformed, "frame packet shorter than its header");
    WebFramePacket p;
    p.frame_index = get_le<std::uint32_t>(bytes, 0);
    p.timestamp_ns = get_le<std::uint64_t>(bytes, 4);
    p.width = get_le<std::uint16_t>(bytes, 12);
    p.height = get_le<std::uint16_t>(bytes, 14);
    const std::uint8_t enc = bytes[16];
    if (enc > static_cast<std::uint8_t>(Encoding::depth8))
        throw Error(Errc::malformed, "unknown frame encoding " + std::to_string(enc));
    p.encoding = static_cast<Encoding>(enc);
    p.payload.assign(bytes.begin() + kPacketHeaderBytes, bytes.end());

    const std::size_t pixels = std::size_t{p.width} * p.height;
    switch (p.encoding) {
    case Encoding::rgba8_raw:
        if (p.payload.size() != 4 * pixels)
            throw Error(Errc::malformed, "rgba8_raw payload length does not match 4*width*height");
        break;
    case Encoding::depth8:
        if (p.payload.size() != pixels)
            throw Error(Errc::malformed, "depth8 payload length does not match width*height");
        break;
    case Encoding::png: {
        Rgba8Image img;
        try {
            img = imageio::decode_png(p.payload);
        } catch (const Error& e) {
            throw Error(Errc::malformed, std::string("png payload: ") + e.what());
        }
        if (img.width != p.width || img.height != p.height)
            throw Error(Errc::malformed, "png payload size disagrees with the header");
        break;
    }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Tone mapping

std::uint8_t linear_to_srgb8(double linear)
{
    const double v = std::clamp(std::isnan(linear) ? 0.0 : linear, 0.0, 1.0);
    const double s = v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
    return static_cast<std::uint8_t>(std::min(255.0, std::floor(255.0 * s + 0.5)));
}

Rgba8Image tonemap_to_rgba8(const ColorImage& premultiplied, const Rgb& background)
{
    Rgba8Image out;
    out.width = premultiplied.width;
    out.height = premultiplied.height;
    out.data.resize(premultiplied.pixel_count() * 4);
    const std::array<std::uint8_t, 3> bg{linear_to_srgb8(background.r), linear_to_srgb8(background.g),
                                         linear_to_srgb8(background.b)};
    for (std::size_t i = 0; i < premultiplied.pixel_count(); ++i) {
        const float* px = premultiplied.data.data() + i * 4;
        std::uint8_t* o = out.data.data() + i * 4;
        const double a = std::clamp(static_cast<double>(px[3]), 0.0, 1.0);
        if (!(a > 0.0)) {
            std::copy(bg.begin(), bg.end(), o);
            o[3] = 0;
            continue;
        }
        for (int c = 0; c < 3; ++c)
            o[c] = linear_to_srgb8(static_cast<double>(px[c]) / a);
        o[3] = static_cast<std::uint8_t>(std::floor(255.0 * a + 0.5));
    }
    return out;
}

std::vector<std::uint8_t> depth_preview(const DepthImage& depth, double vis_max)
{
    std::vector<std::uint8_t> out(depth.pixel_count(), 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z = depth.data[i];
        if (std::isfinite(z) && z > 0.0 && z < vis_max)
            out[i] = static_cast<std::uint8_t>(std::floor(255.0 * (1.0 - z / vis_max) + 0.5));
    }
    return out;
}

std::vector<WebFramePacket> packets_for(const framebus::FrameSnapshot& snapshot, Encoding encoding,
                                        const Rgb& background, std::optional<double> depth_vis_max)
{
    const int w = snapshot.color.width;
    const int h = snapshot.color.height;
    if (w > 0xFFFF || h > 0xFFFF)
        throw Error(Errc::invalid_argument, "frame too large for the web packet header");
    WebFramePacket color;
    color.frame_index = static_cast<std::uint32_t>(snapshot.frame_index);
    color.timestamp_ns = snapshot.timestamp_ns;
    color.width = static_cast<std::uint16_t>(w);
    color.height = static_cast<std::uint16_t>(h);
    color.encoding = encoding;
    Rgba8Image rgba = tonemap_to_rgba8(snapshot.color, background);
    if (encoding == Encoding::png)
        color.payload = imageio::encode_png(rgba);
    else
        color.payload = std::move(rgba.data);

    std::vector<WebFramePacket> packets;
    packets.push_back(std::move(color));
    if (depth_vis_max) {
        WebFramePacket d = packets.front();
        d.encoding = Encoding::depth8;
        d.payload = depth_preview(snapshot.depth, *depth_vis_max);
        packets.push_back(std::move(d));
    }
    return packets;
}

// ---------------------------------------------------------------------------
// Server side

namespace {

using Packet = std::shared_ptr<const std::vector<std::uint8_t>>;
using FramePackets = std::shared_ptr<const std::vector<Packet>>;

std::string_view mime_type(const std::filesystem::path& path)
{
    const auto ext = path.extension().string();
    if (ext == ".html" || ext == ".htm")
        return "text/html";
    if (ext == ".js" || ext == ".mjs")
        return "application/javascript";
    if (ext == ".css")
        return "text/css";
    if (ext == ".json")
        return "application/json";
    if (ext == ".png")
        return "image/png";
    if (ext == ".svg")
        return "image/svg+xml";
    return "application/octet-stream";
}

class Viewer;

} // namespace

struct Gateway::Impl {
    GatewayConfig config;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread io_thread;
    std::thread bus_thread;

    std::atomic<bool> stopping{false};
    std::mutex stop_mutex;
    std::condition_variable stop_cv;

    // io thread only
    std::set<std::shared_ptr<Viewer>> viewers;
    std::string last_status;

    std::mutex session_mutex;
    std::shared_ptr<client::ClientSession> session;
    std::atomic<bool> connected{false};

    std::atomic<std::uint64_t> frames_read{0};
    std::atomic<std::uint64_t> frames_sent{0};
    std::atomic<std::uint64_t> frames_superseded{0};
    std::atomic<std::uint64_t> viewers_connected{0};
    std::atomic<std::uint64_t> viewers_dropped{0};
    std::atomic<std::uint64_t> messages_forwarded{0};
    std::atomic<std::uint64_t> messages_rejected{0};
    std::atomic<std::uint64_t> telemetry_relayed{0};
    std::atomic<std::uint64_t> upstream_connects{0};
    std::atomic<std::size_t> viewer_count{0};

    explicit Impl(GatewayConfig c) : config(std::move(c)) {}

    bool sleep_for(clock::duration d)
    {
        std::unique_lock lock(stop_mutex);
        return !stop_cv.wait_for(lock, d, [&] { return stopping.load(); });
    }

    void do_accept();
    void broadcast_frame(FramePackets frame);
    void broadcast_text(std::string text);
    void publish_status(const std::string& state, const std::string& detail);
    std::optional<std::string> forward_from_viewer(const std::string& text);
    void remove_viewer(const std::shared_ptr<Viewer>& v);
    void bus_loop();
    void run_upstream(const std::shared_ptr<client::ClientSession>& s);
};

namespace {

class Viewer : public std::enable_shared_from_this<Viewer> {
public:
    Viewer(beast::tcp_stream&& stream, Gateway::Impl& gw) : ws_(std::move(stream)), gw_(gw) {}

    void run(http::request<http::string_body> req)
    {
        beast::get_lowest_layer(ws_).expires_never();
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.read_message_max(1u << 20);
        ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    void push_frame(const FramePackets& frame)
    {
        if (closed_)
            return;
        if (writing_) {
            if (pending_frame_)
                gw_.frames_superseded.fetch_add(1, std::memory_order_relaxed);
            pending_frame_ = frame;
            if (++frames_behind_ > gw_.config.viewer_frame_cap) {
                spdlog::warn("dropping stalled viewer ({} frames behind)", frames_behind_);
                gw_.viewers_dropped.fetch_add(1, std::memory_order_relaxed);
                close();
            }
            return;
        }
        pending_frame_ = frame;
        write_next();
    }

    void push_text(const std::string& text)
    {
        if (closed_)
            return;
        if (texts_.size() >= 4096) {
            gw_.viewers_dropped.fetch_add(1, std::memory_order_relaxed);
            close();
            return;
        }
        texts_.push_back(text);
        if (!writing_)
            write_next();
    }

    void close()
    {
        if (closed_)
            return;
        closed_ = true;
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
        beast::get_lowest_layer(ws_).socket().close(ec);
        gw_.remove_viewer(shared_from_this());
    }

private:
    void on_accept(beast::error_code ec)
    {
        if (ec) {
            spdlog::debug("websocket accept failed: {}", ec.message());
            return;
        }
        gw_.viewers.insert(shared_from_this());
        gw_.viewers_connected.fetch_add(1, std::memory_order_relaxed);
        gw_.viewer_count.store(gw_.viewers.size());
        if (!gw_.last_status.empty())
            push_text(gw_.last_status);
        do_read();
    }

    void do_read()
    {
        ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec)
    {
        if (ec) {
            if (!closed_) {
                closed_ = true;
                gw_.remove_viewer(shared_from_this());
            }
            return;
        }
        if (ws_.got_text()) {
            auto reply = gw_.forward_from_viewer(beast::buffers_to_string(in_.data()));
            if (reply)
                push_text(*reply);
        } else {
            gw_.messages_rejected.fetch_add(1, std::memory_order_relaxed);
        }
        in_.consume(in_.size());
        if (!closed_)
            do_read();
    }

    void write_next()
    {
        if (closed_)
            return;
        if (current_.empty() && !texts_.empty()) {
            current_text_ = std::move(texts_.front());
            texts_.pop_front();
            writing_ = true;
            ws_.text(true);
            ws_.async_write(asio::buffer(current_text_),
                            [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec, false); });
            return;
        }
        if (current_.empty() && pending_frame_) {
            current_.assign(pending_frame_->begin(), pending_frame_->end());
            pending_frame_.reset();
        }
        if (current_.empty()) {
            writing_ = false;
            return;
        }
        writing_ = true;
        in_flight_ = current_.front();
        current_.pop_front();
        ws_.binary(true);
        ws_.async_write(asio::buffer(*in_flight_),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec, true); });
    }

    void on_write(beast::error_code ec, bool binary)
    {
        if (ec) {
            if (!closed_) {
                closed_ = true;
                gw_.remove_viewer(shared_from_this());
            }
            return;
        }
        if (binary) {
            in_flight_.reset();
            if (current_.empty()) {
                gw_.frames_sent.fetch_add(1, std::memory_order_relaxed);
                frames_behind_ = 0;
            }
        }
        writing_ = false;
        write_next();
    }

    websocket::stream<beast::tcp_stream> ws_;
    Gateway::Impl& gw_;
    beast::flat_buffer in_;
    std::deque<std::string> texts_;
    std::string current_text_;
    FramePackets pending_frame_;
    std::deque<Packet> current_;
    Packet in_flight_;
    bool writing_ = false;
    bool closed_ = false;
    int frames_behind_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, Gateway::Impl& gw) : stream_(std::move(socket)), gw_(gw) {}

    void run()
    {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

private:
    void on_read(beast::error_code ec)
    {
        if (ec)
            return;
        if (websocket::is_upgrade(req_)) {
            if (req_.target() == "/ws") {
                std::make_shared<Viewer>(std::move(stream_), gw_)->run(std::move(req_));
                return;
            }
            respond(http::status::not_found, "websocket endpoint is /ws\n");
            return;
        }
        if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
            respond(http::status::method_not_allowed, "GET only\n");
            return;
        }
        if (!gw_.config.www_root) {
            respond(http::status::not_found, "no static root configured; connect a WebSocket to /ws\n");
            return;
        }
        std::string target(req_.target());
        target = target.substr(0, target.find('?'));
        if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos) {
            respond(http::status::bad_request, "bad path\n");
            return;
        }
        if (target.back() == '/')
            target += "index.html";
        const std::filesystem::path path = *gw_.config.www_root / target.substr(1);
        http::file_body::value_type body;
        beast::error_code fec;
        body.open(path.string().c_str(), beast::file_mode::scan, fec);
        if (fec) {
            respond(http::status::not_found, "not found\n");
            return;
        }
        auto res = std::make_shared<http::response<http::file_body>>(
            std::piecewise_construct, std::make_tuple(std::move(body)), std::make_tuple(http::status::ok, req_.version()));
        res->set(http::field::content_type, std::string(mime_type(path)));
        res->keep_alive(false);
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    void respond(http::status status, const std::string& text)
    {
        auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
        res->set(http::field::content_type, "text/plain");
        res->body() = text;
        res->keep_alive(false);
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    Gateway::Impl& gw_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
};

} // namespace

void Gateway::Impl::do_accept()
{
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
        if (ec) {
            if (ec != asio::error::operation_aborted)
                spdlog::warn("gateway accept: {}", ec.message());
            if (!acceptor.is_open())
                return;
        } else {
            socket.set_option(tcp::no_delay(true));
            socket.set_option(asio::socket_base::send_buffer_size(256 * 1024));
            std::make_shared<HttpSession>(std::move(socket), *this)->run();
        }
        do_accept();
    });
}

void Gateway::Impl::remove_viewer(const std::shared_ptr<Viewer>& v)
{
    viewers.erase(v);
    viewer_count.store(viewers.size());
}

void Gateway::Impl::broadcast_frame(FramePackets frame)
{
    asio::post(ioc, [this, frame = std::move(frame)] {
        // Copy: push_frame may remove a stalled viewer from the set.
        const std::vector<std::shared_ptr<Viewer>> targets(viewers.begin(), viewers.end());
        for (const auto& v : targets)
            v->push_frame(frame);
    });
}

void Gateway::Impl::broadcast_text(std::string text)
{
    asio::post(ioc, [this, text = std::move(text)] {
        const std::vector<std::shared_ptr<Viewer>> targets(viewers.begin(), viewers.end());
        for (const auto& v : targets)
            v->push_text(text);
    });
}

void Gateway::Impl::publish_status(const std::string& state, const std::string& detail)
{
    nlohmann::ordered_json j;
    j["type"] = "status";
    j["state"] = state;
    j["detail"] = detail;
    j["encoding"] = to_string(config.encoding);
    j["depth_preview"] = config.depth_preview_max.has_value();
    {
        std::lock_guard lock(session_mutex);
        if (session) {
            j["width"] = session->init().width;
            j["height"] = session->init().height;
        }
    }
    std::string text = j.dump();
    asio::post(ioc, [this, text] { last_status = text; });
    broadcast_text(std::move(text));
}

std::optional<std::string> Gateway::Impl::forward_from_viewer(const std::string& text)
{
    const auto reject = [&](wire::ErrorCode code, const std::string& detail) {
        messages_rejected.fetch_add(1, std::memory_order_relaxed);
        return wire::serialize_message(wire::ErrorMsg{code, detail});
    };
    try {
        const auto msg = wire::parse_message(text);
        if (!std::holds_alternative<wire::CameraPoseMsg>(msg) && !std::holds_alternative<wire::ObjectPoseMsg>(msg) &&
            !std::holds_alternative<wire::TelemetryMsg>(msg))
            return reject(wire::ErrorCode::unsupported,
                          "viewers may send camera_pose, object_pose or telemetry, not " + std::string(wire::type_tag(msg)));
    } catch (const Error& e) {
        return reject(e.code() == Errc::unsupported ? wire::ErrorCode::unsupported : wire::ErrorCode::malformed, e.what());
    }

    std::shared_ptr<client::ClientSession> s;
    {
        std::lock_guard lock(session_mutex);
        s = session;
    }
    if (!s)
        return reject(wire::ErrorCode::unsupported, "server not connected");
    try {
        s->send_raw(wire::encode_envelope(text));
        messages_forwarded.fetch_add(1, std::memory_order_relaxed);
    } catch (const Error& e) {
        return reject(wire::ErrorCode::unsupported, std::string("forwarding failed: ") + e.what());
    }
    return std::nullopt;
}

void Gateway::Impl::run_upstream(const std::shared_ptr<client::ClientSession>& s)
{
    std::atomic<bool> broken{false};
    std::thread relay([&] {
        try {
            while (!stopping.load() && !broken.load()) {
                if (auto payload = s->receive_payload(std::chrono::milliseconds(100))) {
                    telemetry_relayed.fetch_add(1, std::memory_order_relaxed);
                    broadcast_text(std::move(*payload));
                }
            }
        } catch (const Error& e) {
            spdlog::info("gateway message channel ended: {}", e.what());
        }
        broken.store(true);
    });

    const auto period = config.target_fps_cap > 0.0
                            ? std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / config.target_fps_cap))
                            : clock::duration::zero();
    framebus::FrameSnapshot snap;
    auto next_slot = clock::now();
    try {
        while (!stopping.load() && !broken.load()) {
            const auto now = clock::now();
            if (now < next_slot && !sleep_for(next_slot - now))
                break;
            if (!s->reader().acquire_into(snap, framebus::Wait::block_until_new, std::chrono::milliseconds(100)))
                continue;
            frames_read.fetch_add(1, std::memory_order_relaxed);
            next_slot = std::max(next_slot + period, clock::now() - period);
            auto encoded = packets_for(snap, config.encoding, config.background, config.depth_preview_max);
            auto frame = std::make_shared<std::vector<Packet>>();
            for (const auto& p : encoded)
                frame->push_back(std::make_shared<const std::vector<std::uint8_t>>(encode_packet(p)));
            broadcast_frame(std::move(frame));
        }
    } catch (const Error& e) {
        spdlog::info("gateway lost the frame region: {}", e.what());
    }
    broken.store(true);
    s->shutdown();
    relay.join();
}

void Gateway::Impl::bus_loop()
{
    auto backoff = config.initial_backoff;
    std::uint64_t attempt = 0;
    while (!stopping.load()) {
        std::shared_ptr<client::ClientSession> s;
        try {
            ++attempt;
            s = client::ClientSession::connect(config.upstream);
        } catch (const Error& e) {
            spdlog::debug("gateway connect attempt {} failed: {}", attempt, e.what());
            publish_status("connecting", e.what());
            if (!sleep_for(backoff))
                break;
            backoff = std::min(backoff * 2, config.max_backoff);
            continue;
        }
        backoff = config.initial_backoff;
        attempt = 0;
        upstream_connects.fetch_add(1, std::memory_order_relaxed);
        {
            std::lock_guard lock(session_mutex);
            session = s;
        }
        connected.store(true);
        spdlog::info("gateway attached to {}x{} frames", s->init().width, s->init().height);
        publish_status("connected", "");

        run_upstream(s);

        {
            std::lock_guard lock(session_mutex);
            session.reset();
        }
        connected.store(false);
        if (!stopping.load())
            publish_status("disconnected", "server went away; reconnecting");
    }
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

std::unique_ptr<Gateway> Gateway::start(const GatewayConfig& config)
{
    if (!(config.target_fps_cap >= 0.0))
        throw Error(Errc::invalid_argument, "target fps cap must be non-negative");
    if (config.viewer_frame_cap < 1)
        throw Error(Errc::invalid_argument, "viewer frame cap must be at least 1");
    if (config.encoding == Encoding::depth8)
        throw Error(Errc::invalid_argument, "depth8 is not a color encoding");

    auto impl = std::make_unique<Impl>(config);
    try {
        const tcp::endpoint ep(asio::ip::make_address(config.bind_address), config.listen_port);
        impl->acceptor.open(ep.protocol());
        impl->acceptor.set_option(asio::socket_base::reuse_address(true));
        impl->acceptor.bind(ep);
        impl->acceptor.listen();
    } catch (const boost::system::system_error& e) {
        throw Error(Errc::network_error, "gateway listen on " + config.bind_address + ":" +
                                             std::to_string(config.listen_port) + ": " + e.what());
    }
    std::unique_ptr<Gateway> gw(new Gateway(std::move(impl)));
    Impl& i = *gw->impl_;
    i.do_accept();
    i.io_thread = std::thread([&i] { i.ioc.run(); });
    i.bus_thread = std::thread([&i] { i.bus_loop(); });
    spdlog::info("gateway listening on {}:{} (/ws)", config.bind_address, gw->port());
    return gw;
}

Gateway::~Gateway()
{
    stop();
}

void Gateway::stop()
{
    if (!impl_ || impl_->stopping.exchange(true))
        return;
    {
        std::lock_guard lock(impl_->stop_mutex);
    }
    impl_->stop_cv.notify_all();
    if (impl_->bus_thread.joinable())
        impl_->bus_thread.join();
    asio::post(impl_->ioc, [i = impl_.get()] {
        beast::error_code ec;
        i->acceptor.close(ec);
        const std::vector<std::shared_ptr<Viewer>> targets(i->viewers.begin(), i->viewers.end());
        for (const auto& v : targets)
            v->close();
        i->ioc.stop();
    });
    if (impl_->io_thread.joinable())
        impl_->io_thread.join();
}

std::uint16_t Gateway::port() const
{
    beast::error_code ec;
    return impl_->acceptor.local_endpoint(ec).port();
}

GatewayCounters Gateway::counters() const
{
    const Impl& i = *impl_;
    GatewayCounters c;
    c.frames_read = i.frames_read.load();
    c.frames_sent = i.frames_sent.load();
    c.frames_superseded = i.frames_superseded.load();
    c.viewers_connected = i.viewers_connected.load();
    c.viewers_dropped = i.viewers_dropped.load();
    c.messages_forwarded = i.messages_forwarded.load();
    c.messages_rejected = i.messages_rejected.load();
    c.telemetry_relayed = i.telemetry_relayed.load();
    c.upstream_connects = i.upstream_connects.load();
    return c;
}

std::size_t Gateway::viewer_count() const
{
    return impl_->viewer_count.load();
}

bool Gateway::upstream_connected() const
{
    return impl_->connected.load();
}

void serve_web(const GatewayConfig& config, const std::atomic<bool>& stop)
{
    auto gw = Gateway::start(config);
    while (!stop.load())
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    gw->stop();
}

} // namespace splatbus::gateway
