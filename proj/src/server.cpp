#include "splatbus/server.hpp"

#include "splatbus/net.hpp"
#include "splatbus/splatref.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

namespace splatbus::server {

namespace {

using clock = std::chrono::steady_clock;

constexpr std::size_t kMaxQueuedMessages = 65536;
constexpr std::size_t kMaxOutboundBytes = 4u << 20;
constexpr std::size_t kReadChunk = 65536;

enum class Channel { init, message };

struct Incoming {
    std::uint64_t connection = 0;
    clock::time_point at;
    /// Empty for input that failed to parse or validate.
    std::optional<wire::ControlMessage> message;
};

struct Connection {
    std::uint64_t id = 0;
    Channel channel = Channel::message;
    net::Socket socket;
    wire::EnvelopeDecoder decoder;
    std::string out;
    std::size_t out_offset = 0;
    bool close_after_flush = false;
    bool handshaken = false;
    bool dead = false;
    clock::time_point last_activity;

    bool has_output() const { return out_offset < out.size(); }
    void queue(std::string_view framed)
    {
        if (out_offset > 0 && out_offset == out.size()) {
            out.clear();
            out_offset = 0;
        }
        out.append(framed);
    }
};

std::string framed_error(wire::ErrorCode code, const std::string& detail)
{
    return wire::frame_message(wire::ErrorMsg{code, detail});
}

} // namespace

void ServerConfig::validate() const
{
    if (width <= 0 || height <= 0 || width > static_cast<int>(framebus::kMaxDimension) ||
        height > static_cast<int>(framebus::kMaxDimension))
        throw Error(Errc::invalid_argument, "width and height must lie in [1, 16384]");
    if (init_port != 0 && init_port == message_port)
        throw Error(Errc::invalid_argument, "init and message ports must differ");
    if (max_clients < 1)
        throw Error(Errc::invalid_argument, "max_clients must be at least 1");
    if (!(far_sentinel > 0.0) || !std::isfinite(far_sentinel))
        throw Error(Errc::invalid_argument, "far_sentinel must be positive");
    if (!(default_fov_y_deg > 0.0 && default_fov_y_deg < 180.0))
        throw Error(Errc::invalid_argument, "fov must lie in (0, 180) degrees");
    if (inactivity_timeout.count() <= 0)
        throw Error(Errc::invalid_argument, "inactivity timeout must be positive");
}

struct Server::Impl {
    const ServerConfig& config;
    net::Socket init_listener;
    net::Socket message_listener;
    int wake_fd = -1;
    std::thread thread;
    std::atomic<bool> stopping{false};
    clock::time_point started = clock::now();
    std::string init_framed;

    std::mutex queue_mutex;
    std::deque<Incoming> queue;

    std::mutex outbox_mutex;
    std::vector<std::string> outbox;

    std::atomic<std::uint64_t> malformed_total{0};
    std::atomic<std::uint64_t> dropped_messages{0};
    std::atomic<std::uint64_t> init_connections{0};
    std::atomic<std::uint64_t> message_connections{0};
    std::atomic<std::uint64_t> refused_connections{0};
    std::atomic<std::uint64_t> reaped_connections{0};

    // Owned by the network thread.
    std::vector<std::unique_ptr<Connection>> connections;
    std::uint64_t next_id = 1;

    explicit Impl(const ServerConfig& c) : config(c) {}

    ~Impl()
    {
        if (wake_fd >= 0)
            ::close(wake_fd);
    }

    void wake()
    {
        const std::uint64_t one = 1;
        [[maybe_unused]] const auto n = ::write(wake_fd, &one, sizeof one);
    }

    void push_incoming(Incoming in)
    {
        std::lock_guard lock(queue_mutex);
        if (queue.size() >= kMaxQueuedMessages) {
            queue.pop_front();
            dropped_messages.fetch_add(1, std::memory_order_relaxed);
        }
        queue.push_back(std::move(in));
    }

    std::size_t live_count(Channel channel) const
    {
        return static_cast<std::size_t>(std::count_if(connections.begin(), connections.end(), [&](const auto& c) {
            return c->channel == channel && !c->dead && !c->close_after_flush;
        }));
    }

    void accept_on(const net::Socket& listener, Channel channel)
    {
        for (;;) {
            net::Socket s(::accept4(listener.fd(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC));
            if (!s.valid())
                return;
            net::set_nodelay(s);
            auto conn = std::make_unique<Connection>();
            conn->id = next_id++;
            conn->channel = channel;
            conn->socket = std::move(s);
            conn->last_activity = clock::now();
            if (live_count(channel) >= static_cast<std::size_t>(config.max_clients)) {
                conn->queue(framed_error(wire::ErrorCode::unsupported, "server is at max_clients"));
                conn->close_after_flush = true;
                refused_connections.fetch_add(1, std::memory_order_relaxed);
                spdlog::info("refusing connection {}: max_clients reached", conn->id);
            } else if (channel == Channel::init) {
                init_connections.fetch_add(1, std::memory_order_relaxed);
            } else {
                message_connections.fetch_add(1, std::memory_order_relaxed);
            }
            connections.push_back(std::move(conn));
        }
    }

    void handle_init_payload(Connection& c, const std::string& payload)
    {
        if (c.handshaken || c.close_after_flush)
            return;
        try {
            const auto msg = wire::parse_message(payload);
            const auto* hello = std::get_if<wire::Hello>(&msg);
            if (hello == nullptr) {
                c.queue(framed_error(wire::ErrorCode::malformed, "expected hello"));
                c.close_after_flush = true;
                return;
            }
            if (hello->protocol_version != wire::kProtocolVersion) {
                c.queue(framed_error(wire::ErrorCode::version_mismatch,
                                     "server speaks protocol " + std::to_string(wire::kProtocolVersion)));
                c.close_after_flush = true;
                return;
            }
            c.queue(init_framed);
            c.handshaken = true;
            spdlog::info("client '{}' completed handshake", hello->client_name);
        } catch (const Error& e) {
            malformed_total.fetch_add(1, std::memory_order_relaxed);
            const auto code =
                e.code() == Errc::unsupported ? wire::ErrorCode::unsupported : wire::ErrorCode::malformed;
            c.queue(framed_error(code, e.what()));
            c.close_after_flush = true;
        }
    }

    void handle_message_payload(Connection& c, const std::string& payload)
    {
        Incoming in{c.id, clock::now(), std::nullopt};
        try {
            auto msg = wire::parse_message(payload);
            if (std::holds_alternative<wire::Hello>(msg))
                return; // identification only
            if (std::holds_alternative<wire::CameraPoseMsg>(msg) || std::holds_alternative<wire::ObjectPoseMsg>(msg) ||
                std::holds_alternative<wire::TelemetryMsg>(msg))
                in.message = std::move(msg);
        } catch (const Error& e) {
            spdlog::debug("dropping malformed message from {}: {}", c.id, e.what());
        }
        push_incoming(std::move(in));
    }

    void read_from(Connection& c)
    {
        std::array<std::uint8_t, kReadChunk> buf{};
        const ssize_t n = ::recv(c.socket.fd(), buf.data(), buf.size(), 0);
        if (n == 0) {
            c.dead = true;
            return;
        }
        if (n < 0) {
            if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
                c.dead = true;
            return;
        }
        c.last_activity = clock::now();
        if (c.close_after_flush)
            return;
        c.decoder.feed(std::span(buf.data(), static_cast<std::size_t>(n)));
        try {
            while (auto payload = c.decoder.next()) {
                if (c.channel == Channel::init)
                    handle_init_payload(c, *payload);
                else
                    handle_message_payload(c, *payload);
            }
        } catch (const Error& e) {
            // Oversize length prefix: report and hang up.
            malformed_total.fetch_add(1, std::memory_order_relaxed);
            if (c.channel == Channel::message)
                push_incoming({c.id, clock::now(), std::nullopt});
            c.queue(framed_error(wire::ErrorCode::oversize, e.what()));
            c.close_after_flush = true;
        }
    }

    void write_to(Connection& c)
    {
        while (c.has_output()) {
            const ssize_t n =
                ::send(c.socket.fd(), c.out.data() + c.out_offset, c.out.size() - c.out_offset, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
                    c.dead = true;
                return;
            }
            c.out_offset += static_cast<std::size_t>(n);
            c.last_activity = clock::now();
        }
        if (c.close_after_flush)
            c.dead = true;
    }

    void drain_outbox()
    {
        std::vector<std::string> pending;
        {
            std::lock_guard lock(outbox_mutex);
            pending.swap(outbox);
        }
        if (pending.empty())
            return;
        for (auto& c : connections) {
            if (c->channel != Channel::message || c->dead || c->close_after_flush)
                continue;
            for (const auto& framed : pending)
                c->queue(framed);
            if (c->out.size() - c->out_offset > kMaxOutboundBytes) {
                spdlog::warn("dropping message client {}: outbound backlog exceeded", c->id);
                c->dead = true;
                reaped_connections.fetch_add(1, std::memory_order_relaxed);
            }
        }
    }

    void reap_idle()
    {
        const auto now = clock::now();
        for (auto& c : connections) {
            if (c->dead)
                continue;
            const bool idle = now - c->last_activity > config.inactivity_timeout;
            // Handshaken init connections stay open for error notifications.
            const bool watched = c->channel == Channel::message || !c->handshaken;
            if (idle && watched) {
                spdlog::info("reaping idle connection {}", c->id);
                c->dead = true;
                reaped_connections.fetch_add(1, std::memory_order_relaxed);
            }
        }
        std::erase_if(connections, [](const auto& c) { return c->dead; });
    }

    void run()
    {
        std::vector<pollfd> fds;
        while (!stopping.load(std::memory_order_acquire)) {
            drain_outbox();
            fds.clear();
            fds.push_back({wake_fd, POLLIN, 0});
            fds.push_back({init_listener.fd(), POLLIN, 0});
            fds.push_back({message_listener.fd(), POLLIN, 0});
            for (const auto& c : connections) {
                short events = POLLIN;
                if (c->has_output())
                    events |= POLLOUT;
                fds.push_back({c->socket.fd(), events, 0});
            }
            const int rc = ::poll(fds.data(), fds.size(), 100);
            if (rc < 0 && errno != EINTR) {
                spdlog::error("server poll failed: {}", std::strerror(errno));
                break;
            }
            if (fds[0].revents & POLLIN) {
                std::uint64_t v;
                [[maybe_unused]] const auto n = ::read(wake_fd, &v, sizeof v);
            }
            // Connections accepted below are not in `fds` yet.
            const std::size_t polled = connections.size();
            for (std::size_t i = 0; i < polled; ++i) {
                Connection& c = *connections[i];
                const short re = fds[3 + i].revents;
                if (re & POLLIN)
                    read_from(c);
                if ((re & (POLLERR | POLLHUP)) && !(re & POLLIN))
                    c.dead = true;
                if (!c.dead && c.has_output())
                    write_to(c);
                else if (!c.dead && c.close_after_flush)
                    c.dead = true;
            }
            if (fds[1].revents & POLLIN)
                accept_on(init_listener, Channel::init);
            if (fds[2].revents & POLLIN)
                accept_on(message_listener, Channel::message);
            reap_idle();
        }
        connections.clear();
    }
};

// ---------------------------------------------------------------------------

Server::Server(const ServerConfig& config) : config_(config) {}

std::unique_ptr<Server> Server::start(const ServerConfig& config)
{
    config.validate();
    std::unique_ptr<Server> server(new Server(config));
    const ServerConfig& cfg = server->config_;

    auto& scene = server->scene_;
    scene.camera.world_to_camera.setIdentity();
    scene.camera.fov_y = geometry::deg_to_rad(cfg.default_fov_y_deg);
    scene.camera.width = cfg.width;
    scene.camera.height = cfg.height;

    server->impl_ = std::make_unique<Impl>(server->config_);
    Impl& impl = *server->impl_;
    impl.init_listener = net::listen_tcp(cfg.bind_address, cfg.init_port);
    impl.message_listener = net::listen_tcp(cfg.bind_address, cfg.message_port);
    net::set_nonblocking(impl.init_listener, true);
    net::set_nonblocking(impl.message_listener, true);

    framebus::RegionOptions options;
    options.name = cfg.region_name;
    options.stamp_checksum = cfg.stamp_checksum;
    server->writer_ = framebus::create_region(
        framebus::FrameDescriptor::for_size(static_cast<std::uint32_t>(cfg.width), static_cast<std::uint32_t>(cfg.height)),
        cfg.transport, options);
    impl.init_framed = wire::frame_message(server->init_packet());

    impl.wake_fd = ::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC);
    if (impl.wake_fd < 0)
        throw Error(Errc::resource_exhausted, "eventfd failed");
    impl.thread = std::thread([&impl] { impl.run(); });
    spdlog::info("server listening: init {} message {} ({}x{}, {})", server->init_port(), server->message_port(),
                 cfg.width, cfg.height, wire::to_string(cfg.transport));
    return server;
}

Server::~Server()
{
    stop();
}

void Server::stop()
{
    if (impl_ && impl_->thread.joinable()) {
        impl_->stopping.store(true, std::memory_order_release);
        impl_->wake();
        impl_->thread.join();
        impl_->init_listener.close();
        impl_->message_listener.close();
    }
    if (writer_)
        writer_->close();
    writer_.reset();
}

std::uint16_t Server::init_port() const
{
    return net::local_port(impl_->init_listener);
}

std::uint16_t Server::message_port() const
{
    return net::local_port(impl_->message_listener);
}

wire::InitPacket Server::init_packet() const
{
    const auto& desc = writer_->descriptor();
    wire::InitPacket p;
    p.width = desc.width;
    p.height = desc.height;
    p.color_pitch = desc.color_pitch;
    p.depth_pitch = desc.depth_pitch;
    p.transport = writer_->info().transport;
    p.attachment_token = writer_->token();
    p.frame_region_bytes = desc.region_bytes();
    return p;
}

ServerCounters Server::counters() const
{
    ServerCounters c;
    c.malformed_total = impl_->malformed_total.load();
    c.dropped_messages = impl_->dropped_messages.load();
    c.init_connections = impl_->init_connections.load();
    c.message_connections = impl_->message_connections.load();
    c.refused_connections = impl_->refused_connections.load();
    c.reaped_connections = impl_->reaped_connections.load();
    return c;
}

double Server::seconds_since_start() const
{
    return std::chrono::duration<double>(clock::now() - impl_->started).count();
}

PollSummary Server::poll_messages()
{
    std::deque<Incoming> pending;
    {
        std::lock_guard lock(impl_->queue_mutex);
        pending.swap(impl_->queue);
    }

    PollSummary summary;
    const wire::CameraPoseMsg* camera = nullptr;
    std::map<std::string, const wire::ObjectPoseMsg*> objects;
    for (const auto& in : pending) {
        scene_.last_message_time[in.connection] = in.at;
        if (!in.message) {
            ++summary.malformed;
            continue;
        }
        if (const auto* c = std::get_if<wire::CameraPoseMsg>(&*in.message)) {
            ++summary.camera_messages;
            camera = c;
        } else if (const auto* o = std::get_if<wire::ObjectPoseMsg>(&*in.message)) {
            ++summary.object_messages;
            objects[o->object_id] = o;
        } else {
            ++summary.telemetry_messages;
        }
    }

    if (camera != nullptr) {
        try {
            const double fov = camera->fov_y_deg ? geometry::deg_to_rad(*camera->fov_y_deg) : scene_.camera.fov_y;
            scene_.camera = geometry::client_pose_to_view(
                geometry::Pose::from_wire(camera->position, camera->rotation, camera->convention), fov, config_.width,
                config_.height);
            summary.camera_applied = true;
        } catch (const Error& e) {
            ++summary.malformed;
            spdlog::warn("camera pose rejected: {}", e.what());
        }
    }
    for (const auto& [id, msg] : objects) {
        ObjectState state;
        state.pose = geometry::Pose::from_wire(msg->position, msg->rotation, msg->convention);
        state.scale = msg->scale;
        scene_.objects[id] = state;
        ++summary.objects_applied;
    }
    if (summary.malformed > 0) {
        impl_->malformed_total.fetch_add(summary.malformed, std::memory_order_relaxed);
        spdlog::debug("{} malformed message(s) dropped this frame", summary.malformed);
    }
    return summary;
}

void Server::publish(const ColorImage& color, const DepthImage& invdepth)
{
    if (!color.same_size(config_.width, config_.height) || !invdepth.same_size(config_.width, config_.height))
        throw Error(Errc::dimension_mismatch, "published images must be " + std::to_string(config_.width) + "x" +
                                                  std::to_string(config_.height));
    const DepthImage linear = geometry::invdepth_to_linear(invdepth, config_.far_sentinel);
    const std::uint64_t index = frame_index_ + 1;
    writer_->publish_frame(color, linear, index, framebus::monotonic_ns());
    frame_index_ = index;
    last_checksum_ = framebus::frame_checksum(color, linear);
}

void Server::send_telemetry(const std::string& series, double value)
{
    std::string framed = wire::frame_message(wire::TelemetryMsg{series, seconds_since_start(), value});
    {
        std::lock_guard lock(impl_->outbox_mutex);
        impl_->outbox.push_back(std::move(framed));
    }
    impl_->wake();
}

// ---------------------------------------------------------------------------

void run_demo(const ServerConfig& config, const DemoOptions& options, const std::atomic<bool>& stop)
{
    config.validate();
    splatref::GaussianCloud cloud;
    try {
        cloud = config.asset_path ? splatref::load_ply(*config.asset_path) : splatref::demo_scene();
        cloud.validate();
    } catch (const Error& e) {
        if (e.code() == Errc::invalid_argument)
            throw Error(Errc::unsupported_asset, e.what());
        throw;
    }
    spdlog::info("demo scene has {} gaussians", cloud.size());

    auto server = Server::start(config);
    if (options.on_started)
        options.on_started(*server);

    splatref::RenderSettings settings;
    settings.width = config.width;
    settings.height = config.height;

    const auto period = options.target_fps > 0.0
                            ? std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / options.target_fps))
                            : clock::duration::zero();
    auto next = clock::now();
    auto last_frame = clock::now();
    double fps = 0.0;

    while (!stop.load(std::memory_order_acquire)) {
        const PollSummary summary = server->poll_messages();

        const auto render_start = clock::now();
        const auto it = server->scene().objects.find(kDemoObjectId);
        const splatref::GaussianCloud* to_render = &cloud;
        splatref::GaussianCloud moved;
        if (it != server->scene().objects.end()) {
            moved = splatref::transform_cloud(cloud, it->second.pose, it->second.scale);
            to_render = &moved;
        }
        settings.fov_y = server->fov_y();
        const auto out = splatref::rasterize(*to_render, server->scene().camera, settings);
        const double render_ms = std::chrono::duration<double, std::milli>(clock::now() - render_start).count();

        server->publish(out.color, out.invdepth);

        const auto now = clock::now();
        const double dt = std::chrono::duration<double>(now - last_frame).count();
        last_frame = now;
        if (dt > 0.0)
            fps = fps == 0.0 ? 1.0 / dt : 0.9 * fps + 0.1 / dt;
        server->send_telemetry("fps", fps);
        server->send_telemetry("render_ms", render_ms);
        server->send_telemetry("camera_messages", static_cast<double>(summary.camera_messages));
        if (summary.camera_applied)
            server->send_telemetry("camera_frame", static_cast<double>(server->frame_index()));
        if (summary.objects_applied > 0)
            server->send_telemetry("object_frame", static_cast<double>(server->frame_index()));

        if (options.on_frame)
            options.on_frame(*server, server->frame_index(), server->last_checksum());
        if (options.max_frames != 0 && server->frame_index() >= options.max_frames)
            break;

        if (period > clock::duration::zero()) {
            next += period;
            const auto now2 = clock::now();
            if (next < now2)
                next = now2; // fell behind; do not try to catch up
            else
                std::this_thread::sleep_until(next);
        }
    }
    spdlog::info("demo stopping after {} frames", server->frame_index());
}

} // namespace splatbus::server
