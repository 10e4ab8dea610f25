// Headless client: grab frames, send poses, record telemetry, measure latency.
// Exit codes: 0 ok, 1 runtime failure, 2 bad arguments, 3 unreadable input,
// 4 cannot connect or attach.

#include "splatbus/client.hpp"
#include "splatbus/gateway.hpp"
#include "splatbus/imageio.hpp"
#include "splatbus/log.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace splatbus;

std::atomic<bool> g_stop{false};

void on_signal(int)
{
    g_stop.store(true);
}

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitConnect = 4;

struct GrabArgs {
    int count = 1;
    std::string out_dir = ".";
    std::string format = "png";
    double depth_max = 100.0;
    bool no_depth = false;
    int timeout_ms = 5000;
};

struct PoseArgs {
    std::string script;
    double rate = 30.0;
    bool sync = false;
    std::string checksums;
    std::vector<double> position{0.0, 0.0, 0.0};
    std::vector<double> rotation{0.0, 0.0, 0.0, 1.0};
    std::optional<double> fov;
    std::string convention = "unity_lh_yup";
    std::string object_id;
    double scale = 1.0;
};

struct TelemetryArgs {
    std::string out;
    double duration = 0.0;
    std::uint64_t max_samples = 0;
};

struct BenchArgs {
    std::uint64_t frames = 300;
    int timeout_ms = 2000;
};

int run_grab(client::ClientSession& session, const GrabArgs& args)
{
    std::filesystem::create_directories(args.out_dir);
    for (int i = 0; i < args.count && !g_stop.load(); ++i) {
        auto snap = session.grab_frame(framebus::Wait::block_until_new, std::chrono::milliseconds(args.timeout_ms));
        if (!snap) {
            spdlog::error("no frame within {} ms", args.timeout_ms);
            return kExitRuntime;
        }
        const auto base = std::filesystem::path(args.out_dir) / fmt::format("frame_{:06}", snap->frame_index);
        const Rgba8Image rgba = gateway::tonemap_to_rgba8(snap->color, Rgb{});
        if (args.format == "ppm")
            imageio::write_ppm(rgba, base.string() + ".ppm");
        else
            imageio::write_png(rgba, base.string() + ".png");
        if (!args.no_depth)
            imageio::write_pgm16(snap->depth, base.string() + "_depth.pgm", args.depth_max);
        std::printf("frame %llu checksum %016llx\n", static_cast<unsigned long long>(snap->frame_index),
                    static_cast<unsigned long long>(framebus::frame_checksum(snap->color, snap->depth)));
    }
    return 0;
}

int run_pose(client::ClientSession& session, const PoseArgs& args)
{
    std::vector<client::PoseCommand> script;
    if (!args.script.empty()) {
        try {
            script = client::load_pose_script(args.script);
        } catch (const Error& e) {
            spdlog::error("{}", e.what());
            return kExitInput;
        }
    } else {
        const auto convention = wire::parse_convention(args.convention);
        if (!convention) {
            spdlog::error("unknown convention '{}'", args.convention);
            return kExitUsage;
        }
        const wire::Vec3 p{args.position[0], args.position[1], args.position[2]};
        const wire::Quat q{args.rotation[0], args.rotation[1], args.rotation[2], args.rotation[3]};
        if (args.object_id.empty())
            script.emplace_back(wire::CameraPoseMsg{p, q, *convention, args.fov});
        else
            script.emplace_back(wire::ObjectPoseMsg{args.object_id, p, q, args.scale, *convention});
    }

    client::ReplayOptions options;
    options.rate_hz = args.rate;
    options.sync = args.sync || !args.checksums.empty();
    const auto records = client::replay_poses(session, script, options, g_stop);
    if (!args.checksums.empty()) {
        std::ofstream out(args.checksums);
        if (!out) {
            spdlog::error("cannot write {}", args.checksums);
            return kExitRuntime;
        }
        out << "step,frame_index,checksum\n";
        for (const auto& r : records)
            out << r.step << ',' << r.frame_index << ',' << fmt::format("{:016x}", r.checksum) << '\n';
    }
    std::printf("sent %zu pose message(s)\n", records.size());
    return 0;
}

int run_telemetry(client::ClientSession& session, const TelemetryArgs& args)
{
    client::RecordOptions options;
    options.duration = std::chrono::milliseconds(static_cast<std::int64_t>(args.duration * 1000.0));
    options.max_samples = args.max_samples;
    std::uint64_t rows = 0;
    if (args.out.empty() || args.out == "-") {
        rows = client::record_telemetry(session, std::cout, options, g_stop);
    } else {
        std::ofstream out(args.out);
        if (!out) {
            spdlog::error("cannot write {}", args.out);
            return kExitRuntime;
        }
        rows = client::record_telemetry(session, out, options, g_stop);
    }
    spdlog::info("recorded {} telemetry samples", rows);
    return 0;
}

int run_bench(client::ClientSession& session, const BenchArgs& args)
{
    const auto r = client::bench(session, args.frames, std::chrono::milliseconds(args.timeout_ms));
    const auto& init = session.init();
    std::printf("transport %s size %ux%u frames %llu\n", std::string(wire::to_string(init.transport)).c_str(),
                init.width, init.height, static_cast<unsigned long long>(r.frames));
    std::printf("publish->snapshot latency ms: median %.4f mean %.4f p95 %.4f p99 %.4f max %.4f\n", r.p50_ms,
                r.mean_ms, r.p95_ms, r.p99_ms, r.max_ms);
    std::printf("seqlock retries %llu\n", static_cast<unsigned long long>(r.torn_retries));
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    init_logging_from_env();

    CLI::App app{"splatbus headless client"};
    app.require_subcommand(1);
    client::ConnectOptions conn;
    int connect_timeout_ms = 5000;
    app.add_option("--host", conn.host, "Server host")->capture_default_str();
    app.add_option("--init-port", conn.init_port, "Init channel port")->capture_default_str();
    app.add_option("--msg-port", conn.message_port, "Message channel port")->capture_default_str();
    app.add_option("--name", conn.client_name, "Name sent in the hello")->capture_default_str();
    app.add_option("--connect-timeout", connect_timeout_ms, "Handshake timeout in ms")->capture_default_str();

    GrabArgs grab;
    auto* grab_cmd = app.add_subcommand("grab", "Save frames as PNG/PPM plus 16-bit depth PGM");
    grab_cmd->add_option("-n,--count", grab.count, "Number of frames")->capture_default_str();
    grab_cmd->add_option("-o,--out-dir", grab.out_dir, "Output directory")->capture_default_str();
    grab_cmd->add_option("--format", grab.format, "Color image format")
        ->check(CLI::IsMember({"png", "ppm"}))
        ->capture_default_str();
    grab_cmd->add_option("--depth-max", grab.depth_max, "Depth mapped to 65535 in the PGM (linear, clamped)")
        ->capture_default_str();
    grab_cmd->add_flag("--no-depth", grab.no_depth, "Skip the depth image");
    grab_cmd->add_option("--timeout", grab.timeout_ms, "Per-frame timeout in ms")->capture_default_str();

    PoseArgs pose;
    auto* pose_cmd = app.add_subcommand("pose", "Send a pose from flags or replay a JSONL script");
    pose_cmd->add_option("--script", pose.script, "JSONL file, one camera_pose/object_pose message per line");
    pose_cmd->add_option("--rate", pose.rate, "Replay rate in messages per second (0 = as fast as possible)")
        ->capture_default_str();
    pose_cmd->add_flag("--sync", pose.sync, "Wait for each pose to reach a frame before sending the next");
    pose_cmd->add_option("--checksums", pose.checksums, "Write step,frame_index,checksum CSV (implies --sync)");
    pose_cmd->add_option("--position", pose.position, "x y z")->expected(3);
    pose_cmd->add_option("--rotation", pose.rotation, "Quaternion x y z w")->expected(4);
    pose_cmd->add_option("--fov", pose.fov, "Vertical field of view in degrees");
    pose_cmd->add_option("--convention", pose.convention, "unity_lh_yup or gs_rh_ydown")->capture_default_str();
    pose_cmd->add_option("--object", pose.object_id, "Send an object pose for this id instead of a camera pose");
    pose_cmd->add_option("--scale", pose.scale, "Object scale")->capture_default_str();

    TelemetryArgs telemetry;
    auto* tel_cmd = app.add_subcommand("telemetry", "Record telemetry as CSV (series,t,value)");
    tel_cmd->add_option("-o,--out", telemetry.out, "Output file (default stdout)");
    tel_cmd->add_option("--duration", telemetry.duration, "Seconds to record (0 = until interrupted)");
    tel_cmd->add_option("--max-samples", telemetry.max_samples, "Stop after this many rows");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Measure publish-to-snapshot latency");
    bench_cmd->add_option("--frames", bench.frames, "Frames to sample")->capture_default_str();
    bench_cmd->add_option("--timeout", bench.timeout_ms, "Per-frame timeout in ms")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }
    conn.timeout = std::chrono::milliseconds(connect_timeout_ms);

    struct sigaction sa {};
    sa.sa_handler = on_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
    std::signal(SIGPIPE, SIG_IGN);

    std::unique_ptr<client::ClientSession> session;
    try {
        session = client::ClientSession::connect(conn);
    } catch (const Error& e) {
        spdlog::error("connect failed ({}): {}", errc_name(e.code()), e.what());
        return kExitConnect;
    }

    try {
        if (*grab_cmd)
            return run_grab(*session, grab);
        if (*pose_cmd)
            return run_pose(*session, pose);
        if (*tel_cmd)
            return run_telemetry(*session, telemetry);
        return run_bench(*session, bench);
    } catch (const Error& e) {
        spdlog::error("{}: {}", errc_name(e.code()), e.what());
        return e.code() == Errc::malformed_pose ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitRuntime;
    }
}
