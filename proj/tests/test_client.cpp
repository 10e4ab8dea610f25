#include "demo_fixture.hpp"
#include "support.hpp"

#include "splatbus/client.hpp"
#include "splatbus/geometry.hpp"
#include "splatbus/net.hpp"
#include "splatbus/splatref.hpp"

#include <doctest.h>

#include <sstream>

using namespace splatbus;
using namespace std::chrono_literals;

namespace {

server::ServerConfig demo_config(wire::Transport t = wire::Transport::shared_memory)
{
    server::ServerConfig cfg;
    cfg.width = 64;
    cfg.height = 48;
    cfg.transport = t;
    return cfg;
}

Errc code_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return Errc::malformed;
}

std::uint16_t unused_port()
{
    auto s = net::listen_tcp("127.0.0.1", 0);
    return net::local_port(s);
}

} // namespace

TEST_SUITE("client")
{
    TEST_CASE("connecting to a closed port fails with a network error")
    {
        client::ConnectOptions o;
        o.init_port = unused_port();
        o.timeout = 1s;
        CHECK(code_of([&] { client::ClientSession::connect(o); }) == Errc::network_error);
    }

    TEST_CASE("local pose validation")
    {
        wire::CameraPoseMsg cam{{0, 0, 0}, {0, 0, 0, 1.5}, wire::Convention::unity_lh_yup, std::nullopt};
        CHECK(code_of([&] { client::validate_camera(cam); }) == Errc::malformed_pose);
        cam.rotation = wire::kIdentityQuat;
        cam.position[1] = std::nan("");
        CHECK(code_of([&] { client::validate_camera(cam); }) == Errc::malformed_pose);
        cam.position[1] = 0;
        cam.fov_y_deg = 0.0;
        CHECK(code_of([&] { client::validate_camera(cam); }) == Errc::malformed_pose);
        cam.fov_y_deg = 60.0;
        CHECK_NOTHROW(client::validate_camera(cam));
        wire::ObjectPoseMsg obj{"", {0, 0, 0}, wire::kIdentityQuat, 1.0, wire::Convention::gs_rh_ydown};
        CHECK(code_of([&] { client::validate_object(obj); }) == Errc::malformed_pose);
        obj.object_id = "x";
        obj.scale = -1.0;
        CHECK(code_of([&] { client::validate_object(obj); }) == Errc::malformed_pose);
    }

    TEST_CASE("CSV rows")
    {
        CHECK(client::csv_row({"fps", 1.5, 60.0}) == "fps,1.5,60");
        const auto row = client::csv_row({"render_ms", 0.1, 1.0 / 3.0});
        const auto value = std::stod(row.substr(row.rfind(',') + 1));
        CHECK(value == 1.0 / 3.0);
    }

    TEST_CASE("pose script parsing")
    {
        std::istringstream in(
            "# comment\n"
            "\n"
            R"({"type":"camera_pose","position":[1,2,3],"rotation":[0,0,0,1],"convention":"unity_lh_yup"})"
            "\n"
            R"({"type":"object_pose","object_id":"scene","position":[0,0,0],"rotation":[0,0,0,1],"scale":2,"convention":"gs_rh_ydown"})"
            "\n");
        const auto script = client::parse_pose_script(in);
        REQUIRE(script.size() == 2);
        CHECK(std::get<wire::CameraPoseMsg>(script[0]).position == wire::Vec3{1, 2, 3});
        CHECK(std::get<wire::ObjectPoseMsg>(script[1]).scale == 2.0);

        std::istringstream bad("\n{\"type\":\"hello\",\"protocol_version\":1,\"client_name\":\"x\"}\n");
        try {
            client::parse_pose_script(bad);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::parse_error);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
        std::istringstream junk("{nope\n");
        CHECK(code_of([&] { client::parse_pose_script(junk); }) == Errc::parse_error);
    }

    TEST_CASE("latency summary")
    {
        const auto r = client::summarize_latencies({5, 1, 4, 2, 3});
        CHECK(r.frames == 5);
        CHECK(r.p50_ms == 3.0);
        CHECK(r.mean_ms == 3.0);
        CHECK(r.max_ms == 5.0);
        CHECK(client::summarize_latencies({}).frames == 0);
    }

    TEST_CASE("default view matches a local render")
    {
        for (auto t : {wire::Transport::shared_memory, wire::Transport::inprocess}) {
            CAPTURE(wire::to_string(t));
            support::DemoServer demo(demo_config(t));
            REQUIRE(demo.ok());
            auto session = client::ClientSession::connect(demo.connect_options());
            auto snap = session->grab_frame(framebus::Wait::block_until_new, 5s);
            REQUIRE(snap);

            splatref::RenderSettings s;
            s.width = 64;
            s.height = 48;
            geometry::ViewState view;
            view.width = 64;
            view.height = 48;
            const auto ref = splatref::rasterize(splatref::demo_scene(), view, s);
            const auto depth = geometry::invdepth_to_linear(ref.invdepth);
            CHECK(snap->color.data == ref.color.data);
            CHECK(snap->depth.data == depth.data);
            double coverage = 0;
            for (std::size_t i = 0; i < ref.color.pixel_count(); ++i)
                coverage += ref.color.data[i * 4 + 3];
            CHECK(coverage > 10.0);
        }
    }

    TEST_CASE("camera pose changes the rendered frame")
    {
        support::DemoServer demo(demo_config());
        REQUIRE(demo.ok());
        auto session = client::ClientSession::connect(demo.connect_options());
        std::atomic<bool> stop{false};
        client::ReplayOptions ro;
        ro.rate_hz = 0;
        ro.sync = true;
        const std::vector<client::PoseCommand> script{
            wire::CameraPoseMsg{{0, 0, 0}, wire::kIdentityQuat, wire::Convention::unity_lh_yup, std::nullopt},
            wire::CameraPoseMsg{{0.5, 0, 0}, wire::kIdentityQuat, wire::Convention::unity_lh_yup, std::nullopt},
            wire::ObjectPoseMsg{server::kDemoObjectId, {0, 0, 1}, wire::kIdentityQuat, 1.0,
                                wire::Convention::unity_lh_yup},
        };
        const auto records = client::replay_poses(*session, script, ro, stop);
        REQUIRE(records.size() == 3);
        CHECK(records[0].frame_index > 0);
        CHECK(records[1].frame_index > records[0].frame_index);
        CHECK(records[0].checksum != records[1].checksum);
        CHECK(records[1].checksum != records[2].checksum);
    }

    TEST_CASE("telemetry recording")
    {
        support::DemoServer demo(demo_config());
        REQUIRE(demo.ok());
        auto session = client::ClientSession::connect(demo.connect_options());
        std::ostringstream out;
        std::atomic<bool> stop{false};
        client::RecordOptions ro;
        ro.max_samples = 30;
        ro.duration = 10s;
        CHECK(client::record_telemetry(*session, out, ro, stop) == 30);
        std::istringstream in(out.str());
        std::string line;
        std::getline(in, line);
        CHECK(line == client::kCsvHeader);
        int rows = 0;
        bool saw_fps = false;
        while (std::getline(in, line)) {
            ++rows;
            saw_fps = saw_fps || line.rfind("fps,", 0) == 0;
            CHECK(std::count(line.begin(), line.end(), ',') >= 2);
        }
        CHECK(rows == 30);
        CHECK(saw_fps);
    }

    TEST_CASE("a dead server is reported instead of hanging")
    {
        support::Child server({SERVER_BIN, "--width", "32", "--height", "24", "--init-port", "0", "--msg-port", "0",
                               "--fps", "100"},
                              "/tmp/splatbus-client-dead-" + std::to_string(getpid()) + ".txt");
        REQUIRE(server.started());
        const std::string path = "/tmp/splatbus-client-dead-" + std::to_string(getpid()) + ".txt";
        std::uint16_t init_port = 0, msg_port = 0;
        REQUIRE(support::wait_until([&] {
            const auto text = support::read_file(path);
            return std::sscanf(text.c_str(), "listening init_port=%hu message_port=%hu", &init_port, &msg_port) == 2;
        }));
        client::ConnectOptions o;
        o.init_port = init_port;
        o.message_port = msg_port;
        auto session = client::ClientSession::connect(o);
        REQUIRE(session->grab_frame(framebus::Wait::block_until_new, 5s));
        const std::string token = session->init().attachment_token;
        server.signal(SIGKILL);
        server.wait();
        // The region may linger after SIGKILL; readers must notice the writer is gone.
        CHECK(code_of([&] { session->grab_frame(framebus::Wait::block_until_new, 5s); }) == Errc::disconnected);
        CHECK(code_of([&] { framebus::attach_region(token); }) == Errc::attach_failed);
        const auto info = framebus::decode_token(token);
        ::shm_unlink(info.name.c_str());
        std::remove(path.c_str());
    }

    TEST_CASE("non-finite poses never reach the socket")
    {
        support::DemoServer demo(demo_config());
        REQUIRE(demo.ok());
        auto session = client::ClientSession::connect(demo.connect_options());
        wire::CameraPoseMsg cam{{0, std::numeric_limits<double>::infinity(), 0}, wire::kIdentityQuat,
                                wire::Convention::unity_lh_yup, std::nullopt};
        CHECK(code_of([&] { session->send_camera(cam); }) == Errc::malformed_pose);
        cam.position[1] = 0.0;
        CHECK_NOTHROW(session->send_camera(cam));
    }

    TEST_CASE("repeated connect and disconnect does not leak")
    {
        support::DemoServer demo(demo_config());
        REQUIRE(demo.ok());
        {
            auto warm = client::ClientSession::connect(demo.connect_options());
            warm->grab_frame();
        }
        std::this_thread::sleep_for(300ms);
        const auto fds = support::open_fd_count();
        const auto shm = support::shm_region_count();
        for (int i = 0; i < 100; ++i) {
            auto s = client::ClientSession::connect(demo.connect_options());
            REQUIRE(s->grab_frame(framebus::Wait::block_until_new, 5s));
            s->close();
        }
        // The server side closes its ends asynchronously.
        CHECK(support::wait_until([&] { return support::open_fd_count() <= fds; }, 5s));
        CHECK(support::shm_region_count() == shm);
    }
}
