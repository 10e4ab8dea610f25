#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splatbus {

enum class Errc {
    // wire
    oversize,
    incomplete_frame,
    malformed,
    unsupported,
    version_mismatch,
    serialization,
    // framebus
    invalid_descriptor,
    already_exists,
    attach_failed,
    incompatible_layout,
    dimension_mismatch,
    disconnected,
    resource_exhausted,
    // geometry
    malformed_pose,
    malformed_view,
    malformed_depth,
    degenerate_projection,
    // splatref
    unsupported_asset,
    parse_error,
    // general
    invalid_argument,
    io_error,
    network_error,
    timeout,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure the library reports carries one of the codes above, so
/// callers can branch on the category without parsing messages.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code)
    {
    }

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace splatbus
