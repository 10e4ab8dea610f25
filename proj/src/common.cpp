#include "splatbus/base64.hpp"
#include "splatbus/error.hpp"
#include "splatbus/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <array>
#include <cstdlib>
#include <mutex>

namespace splatbus {

std::string_view errc_name(Errc code) noexcept
{
    switch (code) {
    case Errc::oversize: return "oversize";
    case Errc::incomplete_frame: return "incomplete_frame";
    case Errc::malformed: return "malformed";
    case Errc::unsupported: return "unsupported";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::serialization: return "serialization";
    case Errc::invalid_descriptor: return "invalid_descriptor";
    case Errc::already_exists: return "already_exists";
    case Errc::attach_failed: return "attach_failed";
    case Errc::incompatible_layout: return "incompatible_layout";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::disconnected: return "disconnected";
    case Errc::resource_exhausted: return "resource_exhausted";
    case Errc::malformed_pose: return "malformed_pose";
    case Errc::malformed_view: return "malformed_view";
    case Errc::malformed_depth: return "malformed_depth";
    case Errc::degenerate_projection: return "degenerate_projection";
    case Errc::unsupported_asset: return "unsupported_asset";
    case Errc::parse_error: return "parse_error";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::io_error: return "io_error";
    case Errc::network_error: return "network_error";
    case Errc::timeout: return "timeout";
    }
    return "unknown";
}

void init_logging_from_env()
{
    static std::once_flag once;
    std::call_once(once, [] {
        // Logs go to stderr so tool output on stdout stays parseable.
        spdlog::set_default_logger(spdlog::stderr_color_mt("splatbus"));
        const char* level = std::getenv("SPLATBUS_LOG");
        if (level == nullptr || *level == '\0') {
            spdlog::set_level(spdlog::level::info);
            return;
        }
        spdlog::set_level(spdlog::level::from_str(level));
    });
}

namespace base64 {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

constexpr std::array<int, 256> make_reverse()
{
    std::array<int, 256> table{};
    for (auto& v : table)
        v = -1;
    for (int i = 0; i < 64; ++i)
        table[static_cast<unsigned char>(kAlphabet[i])] = i;
    return table;
}

constexpr auto kReverse = make_reverse();

} // namespace

std::string encode(std::span<const std::uint8_t> bytes)
{
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(kAlphabet[(v >> 6) & 63]);
        out.push_back(kAlphabet[v & 63]);
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(kAlphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::string encode(std::string_view text)
{
    return encode(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> decode(std::string_view text)
{
    if (text.size() % 4 != 0)
        throw Error(Errc::malformed, "base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        int pad = 0;
        std::uint32_t v = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=') {
                // Padding only in the last quantum, and only in its final two slots.
                if (!last || k < 2)
                    throw Error(Errc::malformed, "misplaced base64 padding");
                ++pad;
                v <<= 6;
                continue;
            }
            if (pad > 0)
                throw Error(Errc::malformed, "base64 data after padding");
            const int d = kReverse[static_cast<unsigned char>(c)];
            if (d < 0)
                throw Error(Errc::malformed, "invalid base64 character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2)
            out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1)
            out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

std::string decode_to_string(std::string_view text)
{
    const auto bytes = decode(text);
    return {bytes.begin(), bytes.end()};
}

} // namespace base64
} // namespace splatbus
