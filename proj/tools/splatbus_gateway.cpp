// Web gateway: relays bus frames to browsers on ws://<bind>:<port>/ws.
// Exit codes: 0 clean, 2 bad configuration.

#include "splatbus/gateway.hpp"
#include "splatbus/log.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int)
{
    g_stop.store(true);
}

} // namespace

int main(int argc, char** argv)
{
    using namespace splatbus;
    init_logging_from_env();

    CLI::App app{"splatbus web gateway"};
    gateway::GatewayConfig cfg;
    std::string encoding = "png";
    std::string www;
    double depth_max = 0.0;
    std::vector<float> background{0.0f, 0.0f, 0.0f};
    app.add_option("--host", cfg.upstream.host, "Render server host")->capture_default_str();
    app.add_option("--init-port", cfg.upstream.init_port, "Render server init port")->capture_default_str();
    app.add_option("--msg-port", cfg.upstream.message_port, "Render server message port")->capture_default_str();
    app.add_option("--bind", cfg.bind_address, "Address for browsers to connect to")->capture_default_str();
    app.add_option("--port", cfg.listen_port, "HTTP/WebSocket port")->capture_default_str();
    app.add_option("--fps-cap", cfg.target_fps_cap, "Maximum frames per second sent to viewers")
        ->capture_default_str();
    app.add_option("--encoding", encoding, "Frame encoding")
        ->check(CLI::IsMember({"png", "rgba8_raw"}))
        ->capture_default_str();
    app.add_option("--depth-preview", depth_max, "Send an 8-bit depth preview normalized to this distance");
    app.add_option("--background", background, "Linear RGB for uncovered pixels")->expected(3);
    app.add_option("--www", www, "Serve static files (the web viewer) from this directory");
    app.add_option("--viewer-frame-cap", cfg.viewer_frame_cap, "Frames a stalled viewer may fall behind")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    cfg.upstream.client_name = "splatbus-gateway";
    cfg.encoding = *gateway::parse_encoding(encoding);
    cfg.background = Rgb{background[0], background[1], background[2]};
    if (depth_max > 0.0)
        cfg.depth_preview_max = depth_max;
    if (!www.empty())
        cfg.www_root = www;

    struct sigaction sa {};
    sa.sa_handler = on_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
    std::signal(SIGPIPE, SIG_IGN);

    try {
        gateway::serve_web(cfg, g_stop);
    } catch (const Error& e) {
        spdlog::error("{}: {}", errc_name(e.code()), e.what());
        return e.code() == Errc::network_error || e.code() == Errc::invalid_argument ? 2 : 1;
    }
    return 0;
}
