// Demo render server: rasterizes a splat scene and publishes every frame on
// the bus. Exit codes: 0 clean, 2 bad configuration, 3 asset error.

#include "splatbus/log.hpp"
#include "splatbus/server.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <iostream>

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int)
{
    g_stop.store(true);
}

constexpr int kExitConfig = 2;
constexpr int kExitAsset = 3;

} // namespace

int main(int argc, char** argv)
{
    using namespace splatbus;
    init_logging_from_env();

    CLI::App app{"splatbus demo server"};
    server::ServerConfig cfg;
    server::DemoOptions demo;
    std::string transport = "shared_memory";
    std::string ply;
    app.add_option("--width", cfg.width, "Frame width in pixels")->capture_default_str();
    app.add_option("--height", cfg.height, "Frame height in pixels")->capture_default_str();
    app.add_option("--init-port", cfg.init_port, "Init channel port (0 = ephemeral)")->capture_default_str();
    app.add_option("--msg-port", cfg.message_port, "Message channel port (0 = ephemeral)")->capture_default_str();
    app.add_option("--bind", cfg.bind_address, "Address to listen on")->capture_default_str();
    app.add_option("--ply", ply, "Gaussian PLY to render instead of the built-in scene");
    app.add_option("--transport", transport, "Frame transport")
        ->check(CLI::IsMember({"shared_memory", "inprocess"}))
        ->capture_default_str();
    app.add_option("--fov", cfg.default_fov_y_deg, "Vertical field of view in degrees until a client sets one")
        ->capture_default_str();
    app.add_option("--far", cfg.far_sentinel, "Linear depth written for background pixels")->capture_default_str();
    app.add_option("--max-clients", cfg.max_clients, "Connections accepted per channel")->capture_default_str();
    app.add_option("--region-name", cfg.region_name, "Frame region name (generated when empty)");
    app.add_flag("--stamp-checksum", cfg.stamp_checksum, "Write a checksum into the region header per frame");
    app.add_option("--fps", demo.target_fps, "Target frame rate (0 = unpaced)")->capture_default_str();
    app.add_option("--frames", demo.max_frames, "Exit after this many frames (0 = run until interrupted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }
    cfg.transport = *wire::parse_transport(transport);
    if (!ply.empty())
        cfg.asset_path = ply;

    struct sigaction sa {};
    sa.sa_handler = on_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
    std::signal(SIGPIPE, SIG_IGN);

    demo.on_started = [](server::Server& s) {
        std::printf("listening init_port=%u message_port=%u transport=%s size=%dx%d\n", s.init_port(),
                    s.message_port(), std::string(wire::to_string(s.config().transport)).c_str(), s.config().width,
                    s.config().height);
        std::fflush(stdout);
    };

    try {
        server::run_demo(cfg, demo, g_stop);
    } catch (const Error& e) {
        spdlog::error("{}: {}", errc_name(e.code()), e.what());
        switch (e.code()) {
        case Errc::unsupported_asset:
        case Errc::parse_error:
        case Errc::io_error:
            return kExitAsset;
        case Errc::invalid_argument:
        case Errc::network_error:
        case Errc::already_exists:
            return kExitConfig;
        default:
            return 1;
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
