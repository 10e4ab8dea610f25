#include "support.hpp"

#include "splatbus/imageio.hpp"
#include "splatbus/net.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace splatbus;
using namespace std::chrono_literals;

namespace {

std::string tmp_path(const std::string& stem)
{
    return (std::filesystem::temp_directory_path() / ("splatbus-tools-" + std::to_string(getpid()) + "-" + stem))
        .string();
}

int run(const std::vector<std::string>& argv, const std::string& out = "/dev/null")
{
    support::Child c(argv, out);
    REQUIRE(c.started());
    return c.wait(60s);
}

/// Server child on ephemeral ports.
struct ServerProcess {
    std::string log = tmp_path("server.txt");
    support::Child child;
    unsigned init_port = 0;
    unsigned msg_port = 0;

    explicit ServerProcess(std::vector<std::string> extra = {})
    {
        std::vector<std::string> argv{SERVER_BIN, "--width", "48", "--height", "32", "--init-port", "0", "--msg-port",
                                      "0",        "--fps",   "60"};
        argv.insert(argv.end(), extra.begin(), extra.end());
        child = support::Child(argv, log);
        support::wait_until([&] {
            return std::sscanf(support::read_file(log).c_str(), "listening init_port=%u message_port=%u", &init_port,
                               &msg_port) == 2;
        });
    }
    ~ServerProcess() { std::remove(log.c_str()); }

    std::vector<std::string> client(std::vector<std::string> args) const
    {
        std::vector<std::string> argv{CLIENT_BIN, "--init-port", std::to_string(init_port), "--msg-port",
                                      std::to_string(msg_port)};
        argv.insert(argv.end(), args.begin(), args.end());
        return argv;
    }
};

} // namespace

TEST_SUITE("tools")
{
    TEST_CASE("server rejects bad configuration with exit code 2")
    {
        CHECK(run({SERVER_BIN, "--width", "0"}) == 2);
        CHECK(run({SERVER_BIN, "--transport", "cuda"}) == 2);
        CHECK(run({SERVER_BIN, "--fov", "200"}) == 2);
        CHECK(run({SERVER_BIN, "--no-such-flag"}) == 2);
        CHECK(run({SERVER_BIN, "--init-port", "7000", "--msg-port", "7000"}) == 2);
    }

    TEST_CASE("server reports asset errors with exit code 3")
    {
        CHECK(run({SERVER_BIN, "--init-port", "0", "--msg-port", "0", "--ply", "/nonexistent/scene.ply"}) == 3);
        const auto bad = tmp_path("bad.ply");
        {
            std::ofstream(bad) << "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        }
        CHECK(run({SERVER_BIN, "--init-port", "0", "--msg-port", "0", "--ply", bad}) == 3);
        std::remove(bad.c_str());
    }

    TEST_CASE("server exits cleanly on SIGINT and SIGTERM")
    {
        for (int sig : {SIGINT, SIGTERM}) {
            const auto shm = support::shm_region_count();
            ServerProcess srv;
            REQUIRE(srv.init_port != 0);
            srv.child.signal(sig);
            CHECK(srv.child.wait(10s) == 0);
            CHECK(support::shm_region_count() == shm);
        }
    }

    TEST_CASE("server stops after --frames")
    {
        CHECK(run({SERVER_BIN, "--width", "16", "--height", "16", "--init-port", "0", "--msg-port", "0", "--fps", "0",
                   "--frames", "5"}) == 0);
    }

    TEST_CASE("client grab writes color and depth images")
    {
        ServerProcess srv;
        REQUIRE(srv.init_port != 0);
        const auto dir = tmp_path("grab");
        const auto out = tmp_path("grab.txt");
        CHECK(run(srv.client({"grab", "-n", "2", "-o", dir}), out) == 0);
        const auto text = support::read_file(out);
        CHECK(text.find("checksum") != std::string::npos);
        int pngs = 0, pgms = 0;
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            if (e.path().extension() == ".png") {
                ++pngs;
                const auto img = imageio::read_png(e.path());
                CHECK(img.width == 48);
                CHECK(img.height == 32);
            }
            if (e.path().extension() == ".pgm") {
                ++pgms;
                CHECK(support::read_file(e.path().string()).rfind("P5\n48 32\n65535\n", 0) == 0);
            }
        }
        CHECK(pngs == 2);
        CHECK(pgms == 2);
        std::filesystem::remove_all(dir);
        std::remove(out.c_str());
    }

    TEST_CASE("client telemetry, pose and bench")
    {
        ServerProcess srv;
        REQUIRE(srv.init_port != 0);
        const auto csv = tmp_path("telemetry.csv");
        CHECK(run(srv.client({"telemetry", "-o", csv, "--max-samples", "10", "--duration", "10"})) == 0);
        const auto text = support::read_file(csv);
        CHECK(text.rfind("series,t,value\n", 0) == 0);
        CHECK(std::count(text.begin(), text.end(), '\n') == 11);

        const auto script = tmp_path("poses.jsonl");
        {
            std::ofstream f(script);
            f << "# orbit\n";
            f << R"({"type":"camera_pose","position":[0,0,0],"rotation":[0,0,0,1],"convention":"unity_lh_yup"})" << "\n";
            f << R"({"type":"camera_pose","position":[0.3,0,0],"rotation":[0,0,0,1],"convention":"unity_lh_yup","fov_y_deg":50})" << "\n";
        }
        const auto sums = tmp_path("sums.csv");
        CHECK(run(srv.client({"pose", "--script", script, "--rate", "0", "--checksums", sums})) == 0);
        const auto sum_text = support::read_file(sums);
        CHECK(sum_text.rfind("step,frame_index,checksum\n", 0) == 0);
        CHECK(std::count(sum_text.begin(), sum_text.end(), '\n') == 3);

        CHECK(run(srv.client({"pose", "--position", "0", "0", "1"})) == 0);
        CHECK(run(srv.client({"pose", "--rotation", "0", "0", "0", "2"})) == 2);

        const auto bench = tmp_path("bench.txt");
        CHECK(run(srv.client({"bench", "--frames", "20"}), bench) == 0);
        CHECK(support::read_file(bench).find("median") != std::string::npos);

        std::remove(csv.c_str());
        std::remove(script.c_str());
        std::remove(sums.c_str());
        std::remove(bench.c_str());
    }

    TEST_CASE("client exit codes")
    {
        auto l = net::listen_tcp("127.0.0.1", 0);
        const auto port = std::to_string(net::local_port(l));
        l.close();
        CHECK(run({CLIENT_BIN, "--init-port", port, "--connect-timeout", "500", "grab"}) == 4);
        CHECK(run({CLIENT_BIN}) == 2);
        CHECK(run({CLIENT_BIN, "grab", "--format", "jpeg"}) == 2);

        ServerProcess srv;
        REQUIRE(srv.init_port != 0);
        CHECK(run(srv.client({"pose", "--script", "/nonexistent.jsonl"})) == 3);
    }

    TEST_CASE("gateway rejects bad configuration")
    {
        CHECK(run({GATEWAY_BIN, "--encoding", "jpeg"}) == 2);
        CHECK(run({GATEWAY_BIN, "--bogus"}) == 2);
    }
}
