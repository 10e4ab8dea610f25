#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include "splatbus/framebus.hpp"
#include "splatbus/image.hpp"
#include "splatbus/wire.hpp"

#include <chrono>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sys/mman.h>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <dirent.h>
#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace support {

using namespace splatbus;

inline wire::Quat random_quat(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    double x, y, z, w, len;
    do {
        x = n(rng);
        y = n(rng);
        z = n(rng);
        w = n(rng);
        len = std::sqrt(x * x + y * y + z * z + w * w);
    } while (len < 1e-6);
    return {x / len, y / len, z / len, w / len};
}

inline wire::Vec3 random_vec(std::mt19937_64& rng, double scale = 100.0)
{
    std::uniform_real_distribution<double> u(-scale, scale);
    return {u(rng), u(rng), u(rng)};
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len = 24)
{
    static const std::vector<std::string> pieces{"a", "Z", "0", "_", "-", " ", "\"", "\\", "/", "\n", "\t",
                                                 "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x98\x80", "cam", "obj"};
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::string s;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i)
        s += pieces[pick(rng)];
    return s;
}

inline double random_real(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> mode(0, 3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    switch (mode(rng)) {
    case 0: return u(rng);
    case 1: return u(rng) * 1e6;
    case 2: return u(rng) * 1e-9;
    default: return std::ldexp(u(rng), std::uniform_int_distribution<int>(-300, 300)(rng));
    }
}

/// One valid message of the given schema index (0..5).
inline wire::ControlMessage random_message(std::mt19937_64& rng, int kind)
{
    std::uniform_int_distribution<int> coin(0, 1);
    const auto convention = coin(rng) ? wire::Convention::unity_lh_yup : wire::Convention::gs_rh_ydown;
    switch (kind) {
    case 0: return wire::Hello{std::uniform_int_distribution<int>(1, 1 << 30)(rng), random_text(rng)};
    case 1: {
        wire::InitPacket p;
        p.width = std::uniform_int_distribution<std::uint32_t>(1, 8192)(rng);
        p.height = std::uniform_int_distribution<std::uint32_t>(1, 8192)(rng);
        p.color_pitch = framebus::compute_pitch(p.width, 16) + 64 * coin(rng);
        p.depth_pitch = framebus::compute_pitch(p.width, 4);
        p.transport = coin(rng) ? wire::Transport::shared_memory : wire::Transport::inprocess;
        p.attachment_token = "c3BsYXRidXM=";
        p.frame_region_bytes = framebus::kHeaderBytes + p.height * (p.color_pitch + p.depth_pitch);
        return p;
    }
    case 2: {
        wire::CameraPoseMsg m{random_vec(rng), random_quat(rng), convention, std::nullopt};
        if (coin(rng))
            m.fov_y_deg = std::uniform_real_distribution<double>(1.0, 179.0)(rng);
        return m;
    }
    case 3:
        return wire::ObjectPoseMsg{random_text(rng) + "o", random_vec(rng), random_quat(rng),
                                   std::uniform_real_distribution<double>(1e-3, 1e3)(rng), convention};
    case 4:
        return wire::TelemetryMsg{random_text(rng), std::uniform_real_distribution<double>(0.0, 1e5)(rng),
                                  random_real(rng)};
    default: {
        static const wire::ErrorCode codes[] = {wire::ErrorCode::version_mismatch, wire::ErrorCode::malformed,
                                                wire::ErrorCode::oversize, wire::ErrorCode::unsupported};
        return wire::ErrorMsg{codes[std::uniform_int_distribution<int>(0, 3)(rng)], random_text(rng)};
    }
    }
}

/// Solid-colour frame whose pixels all encode `value`.
inline void fill_frame(ColorImage& color, DepthImage& depth, float value)
{
    for (std::size_t i = 0; i < color.pixel_count(); ++i) {
        color.data[i * 4 + 0] = value;
        color.data[i * 4 + 1] = value * 0.5f;
        color.data[i * 4 + 2] = 1.0f - value;
        color.data[i * 4 + 3] = 1.0f;
        depth.data[i] = 1.0f + value;
    }
}

/// Child process handle; killed on destruction if still running.
class Child {
public:
    Child() = default;
    explicit Child(const std::vector<std::string>& argv, const std::string& stdout_path = {})
    {
        std::vector<char*> args;
        for (const auto& a : argv)
            args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        if (!stdout_path.empty())
            posix_spawn_file_actions_addopen(&actions, 1, stdout_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (posix_spawn(&pid_, args[0], &actions, nullptr, args.data(), environ) != 0)
            pid_ = -1;
        posix_spawn_file_actions_destroy(&actions);
    }
    Child(Child&& o) noexcept : pid_(o.pid_) { o.pid_ = -1; }
    Child& operator=(Child&& o) noexcept
    {
        std::swap(pid_, o.pid_);
        return *this;
    }
    ~Child()
    {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
        }
    }

    bool started() const { return pid_ > 0; }
    pid_t pid() const { return pid_; }
    void signal(int sig) const { ::kill(pid_, sig); }

    /// Exit status, or -1 on timeout / abnormal termination.
    int wait(std::chrono::milliseconds timeout = std::chrono::seconds(30))
    {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        while (pid_ > 0) {
            int status = 0;
            const pid_t r = ::waitpid(pid_, &status, WNOHANG);
            if (r == pid_) {
                pid_ = -1;
                return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
            }
            if (std::chrono::steady_clock::now() > deadline)
                return -1;
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        return -1;
    }

private:
    pid_t pid_ = -1;
};

inline std::size_t open_fd_count()
{
    std::size_t n = 0;
    if (DIR* d = opendir("/proc/self/fd")) {
        while (readdir(d) != nullptr)
            ++n;
        closedir(d);
    }
    return n;
}

inline std::size_t shm_region_count()
{
    std::size_t n = 0;
    if (DIR* d = opendir("/dev/shm")) {
        while (dirent* e = readdir(d))
            if (std::string(e->d_name).rfind("splatbus", 0) == 0)
                ++n;
        closedir(d);
    }
    return n;
}

inline std::string read_file(const std::string& path)
{
    std::string s;
    if (FILE* f = std::fopen(path.c_str(), "rb")) {
        char buf[4096];
        std::size_t n;
        while ((n = std::fread(buf, 1, sizeof buf, f)) > 0)
            s.append(buf, n);
        std::fclose(f);
    }
    return s;
}

template<typename Pred>
bool wait_until(Pred pred, std::chrono::milliseconds timeout = std::chrono::seconds(10))
{
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (!pred()) {
        if (std::chrono::steady_clock::now() > deadline)
            return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
}

} // namespace support
