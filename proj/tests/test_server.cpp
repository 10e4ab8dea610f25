#include "support.hpp"

#include "splatbus/client.hpp"
#include "splatbus/net.hpp"
#include "splatbus/server.hpp"

#include <doctest.h>

#include <thread>

using namespace splatbus;
using namespace std::chrono_literals;

namespace {

server::ServerConfig small_config(wire::Transport t = wire::Transport::shared_memory)
{
    server::ServerConfig cfg;
    cfg.width = 32;
    cfg.height = 24;
    cfg.init_port = 0;
    cfg.message_port = 0;
    cfg.transport = t;
    return cfg;
}

client::ConnectOptions options_for(const server::Server& s)
{
    client::ConnectOptions o;
    o.init_port = s.init_port();
    o.message_port = s.message_port();
    o.timeout = 3s;
    return o;
}

wire::CameraPoseMsg camera_at(double x)
{
    return {{x, 0.0, 0.0}, wire::kIdentityQuat, wire::Convention::unity_lh_yup, std::nullopt};
}

/// Polls until `n` camera messages have been counted in total.
server::PollSummary poll_until_cameras(server::Server& s, std::size_t n)
{
    server::PollSummary total;
    support::wait_until([&] {
        const auto p = s.poll_messages();
        total.camera_messages += p.camera_messages;
        total.malformed += p.malformed;
        total.object_messages += p.object_messages;
        total.objects_applied += p.objects_applied;
        total.camera_applied = total.camera_applied || p.camera_applied;
        return total.camera_messages >= n;
    });
    return total;
}

} // namespace

TEST_SUITE("server")
{
    TEST_CASE("config validation")
    {
        auto cfg = small_config();
        cfg.width = 0;
        CHECK_THROWS_AS(cfg.validate(), Error);
        cfg = small_config();
        cfg.default_fov_y_deg = 180.0;
        CHECK_THROWS_AS(cfg.validate(), Error);
        cfg = small_config();
        cfg.max_clients = 0;
        CHECK_THROWS_AS(cfg.validate(), Error);
        cfg = small_config();
        cfg.init_port = 5000;
        cfg.message_port = 5000;
        CHECK_THROWS_AS(cfg.validate(), Error);
    }

    TEST_CASE("handshake returns the init packet")
    {
        for (auto t : {wire::Transport::shared_memory, wire::Transport::inprocess}) {
            auto srv = server::Server::start(small_config(t));
            auto sock = net::connect_tcp("127.0.0.1", srv->init_port(), 2s);
            net::MessageStream stream(std::move(sock));
            stream.send(wire::Hello{1, "test"});
            const auto reply = stream.receive(2s);
            REQUIRE(reply);
            const auto& init = std::get<wire::InitPacket>(*reply);
            CHECK(init == srv->init_packet());
            CHECK(init.width == 32);
            CHECK(init.height == 24);
            CHECK(init.transport == t);
            CHECK(init.color_pitch == framebus::compute_pitch(32, 16));
            CHECK(init.depth_pitch == framebus::compute_pitch(32, 4));
            CHECK(init.frame_region_bytes == framebus::kHeaderBytes + 24 * (init.color_pitch + init.depth_pitch));
            if (t == wire::Transport::shared_memory)
                CHECK_NOTHROW(framebus::attach_region(init.attachment_token));
        }
    }

    TEST_CASE("wrong protocol version is refused")
    {
        auto srv = server::Server::start(small_config());
        net::MessageStream stream(net::connect_tcp("127.0.0.1", srv->init_port(), 2s));
        stream.send(wire::Hello{999, "future"});
        const auto reply = stream.receive(2s);
        REQUIRE(reply);
        CHECK(std::get<wire::ErrorMsg>(*reply).code == wire::ErrorCode::version_mismatch);
        CHECK_THROWS_AS(stream.receive(2s), Error);

        auto o = options_for(*srv);
        o.protocol_version = 999;
        try {
            client::ClientSession::connect(o);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::version_mismatch);
        }
    }

    TEST_CASE("non-hello first message is rejected")
    {
        auto srv = server::Server::start(small_config());
        net::MessageStream stream(net::connect_tcp("127.0.0.1", srv->init_port(), 2s));
        stream.send(camera_at(1.0));
        const auto reply = stream.receive(2s);
        REQUIRE(reply);
        CHECK(std::get<wire::ErrorMsg>(*reply).code == wire::ErrorCode::malformed);
    }

    TEST_CASE("connections beyond max_clients are refused")
    {
        auto cfg = small_config();
        cfg.max_clients = 2;
        auto srv = server::Server::start(cfg);
        auto a = client::ClientSession::connect(options_for(*srv));
        auto b = client::ClientSession::connect(options_for(*srv));
        try {
            client::ClientSession::connect(options_for(*srv));
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() != Errc::timeout);
        }
        CHECK(srv->counters().refused_connections >= 1);
        a->close();
        a.reset();
        CHECK(support::wait_until([&] {
            try {
                client::ClientSession::connect(options_for(*srv));
                return true;
            } catch (const Error&) {
                return false;
            }
        }));
    }

    TEST_CASE("a burst of camera poses applies only the last one")
    {
        auto srv = server::Server::start(small_config());
        auto session = client::ClientSession::connect(options_for(*srv));
        for (int i = 1; i <= 1000; ++i)
            session->send_camera(camera_at(i));
        std::this_thread::sleep_for(300ms);
        const auto first = srv->poll_messages();
        CHECK(first.camera_applied);
        const auto rest = poll_until_cameras(*srv, 1000 - first.camera_messages);
        CHECK(first.camera_messages + rest.camera_messages == 1000);
        // Camera at x = 1000 in the client frame maps to translation -1000.
        CHECK(srv->scene().camera.world_to_camera(0, 3) == doctest::Approx(-1000.0));
    }

    TEST_CASE("object poses are latest-wins per id")
    {
        auto srv = server::Server::start(small_config());
        auto session = client::ClientSession::connect(options_for(*srv));
        for (int i = 1; i <= 10; ++i) {
            session->send_object({"a", {double(i), 0, 0}, wire::kIdentityQuat, 1.0, wire::Convention::gs_rh_ydown});
            session->send_object({"b", {0, double(i), 0}, wire::kIdentityQuat, 2.0, wire::Convention::gs_rh_ydown});
        }
        session->send_camera(camera_at(0));
        const auto s = poll_until_cameras(*srv, 1);
        CHECK(s.object_messages == 20);
        REQUIRE(srv->scene().objects.count("a") == 1);
        CHECK(srv->scene().objects.at("a").pose.position.x() == 10.0);
        CHECK(srv->scene().objects.at("b").pose.position.y() == 10.0);
        CHECK(srv->scene().objects.at("b").scale == 2.0);
    }

    TEST_CASE("fov in a camera pose persists")
    {
        auto srv = server::Server::start(small_config());
        auto session = client::ClientSession::connect(options_for(*srv));
        auto msg = camera_at(0);
        msg.fov_y_deg = 90.0;
        session->send_camera(msg);
        poll_until_cameras(*srv, 1);
        CHECK(srv->fov_y() == doctest::Approx(geometry::deg_to_rad(90.0)));
        session->send_camera(camera_at(1));
        poll_until_cameras(*srv, 1);
        CHECK(srv->fov_y() == doctest::Approx(geometry::deg_to_rad(90.0)));
    }

    TEST_CASE("malformed messages only bump counters")
    {
        auto srv = server::Server::start(small_config());
        auto session = client::ClientSession::connect(options_for(*srv));
        session->send_raw(wire::encode_envelope("not json"));
        session->send_raw(wire::encode_envelope(R"({"type":"camera_pose","position":[0,0,0],"rotation":[0,0,0,2],"convention":"unity_lh_yup"})"));
        session->send_raw(wire::encode_envelope(R"({"type":"frobnicate"})"));
        session->send_camera(camera_at(5));
        const auto s = poll_until_cameras(*srv, 1);
        CHECK(s.malformed == 3);
        CHECK(srv->counters().malformed_total == 3);
        CHECK(srv->scene().camera.world_to_camera(0, 3) == doctest::Approx(-5.0));
        // The connection survives.
        session->send_camera(camera_at(6));
        poll_until_cameras(*srv, 1);
        CHECK(srv->scene().camera.world_to_camera(0, 3) == doctest::Approx(-6.0));
    }

    TEST_CASE("oversize length prefix closes only that connection")
    {
        auto srv = server::Server::start(small_config());
        auto good = client::ClientSession::connect(options_for(*srv));
        net::MessageStream bad(net::connect_tcp("127.0.0.1", srv->message_port(), 2s));
        bad.send_payload("{}");
        const std::string prefix("\x7f\xff\xff\xff", 4);
        net::send_all(bad.socket(), prefix);
        const auto reply = bad.receive(2s);
        REQUIRE(reply);
        CHECK(std::get<wire::ErrorMsg>(*reply).code == wire::ErrorCode::oversize);
        CHECK_THROWS_AS(bad.receive(2s), Error);
        good->send_camera(camera_at(2));
        poll_until_cameras(*srv, 1);
        CHECK(srv->scene().camera.world_to_camera(0, 3) == doctest::Approx(-2.0));
    }

    TEST_CASE("slow and garbage clients do not stall others")
    {
        auto cfg = small_config();
        cfg.inactivity_timeout = 300ms;
        auto srv = server::Server::start(cfg);
        // Half a length prefix, then nothing.
        auto slow = net::connect_tcp("127.0.0.1", srv->message_port(), 2s);
        net::send_all(slow, std::string("\x00\x00", 2));
        // Random bytes on the init channel.
        auto junk = net::connect_tcp("127.0.0.1", srv->init_port(), 2s);
        std::mt19937_64 rng(61);
        std::string noise(4096, '\0');
        for (auto& c : noise)
            c = static_cast<char>(rng());
        try {
            net::send_all(junk, noise);
        } catch (const Error&) {
        }
        auto session = client::ClientSession::connect(options_for(*srv));
        session->send_camera(camera_at(3));
        poll_until_cameras(*srv, 1);
        CHECK(srv->scene().camera.world_to_camera(0, 3) == doctest::Approx(-3.0));
        CHECK(support::wait_until([&] { return srv->counters().reaped_connections >= 1; }, 5s));
    }

    TEST_CASE("publish converts inverse depth and numbers frames")
    {
        auto srv = server::Server::start(small_config());
        auto reader = framebus::attach_region(srv->init_packet().attachment_token);
        ColorImage color(32, 24, 0.5f);
        DepthImage inv(32, 24, 0.0f);
        inv.data[1] = 0.25f;
        srv->publish(color, inv);
        auto snap = reader->acquire_latest(framebus::Wait::nonblocking);
        REQUIRE(snap);
        CHECK(snap->frame_index == 1);
        CHECK(snap->depth.data[0] == static_cast<float>(geometry::kDefaultFarSentinel));
        CHECK(snap->depth.data[1] == 4.0f);
        CHECK(framebus::frame_checksum(snap->color, snap->depth) == srv->last_checksum());
        for (int i = 0; i < 5; ++i)
            srv->publish(color, inv);
        CHECK(srv->frame_index() == 6);
        CHECK(reader->acquire_latest(framebus::Wait::nonblocking)->frame_index == 6);
        CHECK_THROWS_AS(srv->publish(ColorImage(4, 4), inv), Error);
        inv.data[0] = -1.0f;
        CHECK_THROWS_AS(srv->publish(color, inv), Error);
    }

    TEST_CASE("telemetry reaches every message client")
    {
        auto srv = server::Server::start(small_config());
        auto a = client::ClientSession::connect(options_for(*srv));
        auto b = client::ClientSession::connect(options_for(*srv));
        // Let the server register both message connections.
        std::this_thread::sleep_for(100ms);
        srv->send_telemetry("fps", 59.5);
        for (auto* s : {a.get(), b.get()}) {
            const auto t = s->wait_for_series("fps", 2s);
            REQUIRE(t);
            CHECK(t->value == 59.5);
            CHECK(t->t >= 0.0);
        }
    }

    TEST_CASE("port already in use")
    {
        auto srv = server::Server::start(small_config());
        auto cfg = small_config();
        cfg.init_port = srv->init_port();
        try {
            server::Server::start(cfg);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::network_error);
        }
    }

    TEST_CASE("stop tears everything down")
    {
        const auto shm_before = support::shm_region_count();
        const auto fds_before = support::open_fd_count();
        {
            auto srv = server::Server::start(small_config());
            auto s = client::ClientSession::connect(options_for(*srv));
            CHECK(support::shm_region_count() == shm_before + 1);
            srv->stop();
            CHECK_THROWS_AS(s->grab_frame(framebus::Wait::block_until_new, 1s), Error);
        }
        CHECK(support::shm_region_count() == shm_before);
        CHECK(support::open_fd_count() == fds_before);
    }
}
