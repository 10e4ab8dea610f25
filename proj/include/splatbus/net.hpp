#pragma once

// Thin POSIX TCP helpers for the two control channels.

#include "splatbus/wire.hpp"

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace splatbus::net {

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }
    Socket(Socket&& other) noexcept : fd_(other.release()) {}
    Socket& operator=(Socket&& other) noexcept
    {
        if (this != &other) {
            close();
            fd_ = other.release();
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release()
    {
        const int fd = fd_;
        fd_ = -1;
        return fd;
    }
    void close();
    /// shutdown(SHUT_RDWR) without releasing the descriptor; unblocks other
    /// threads sitting in recv/send on it.
    void shutdown();

private:
    int fd_ = -1;
};

/// Binds and listens; port 0 picks an ephemeral port. Throws
/// Errc::network_error (e.g. port in use).
Socket listen_tcp(const std::string& address, std::uint16_t port, int backlog = 16);
std::uint16_t local_port(const Socket& socket);

/// Throws Errc::network_error on refusal or timeout.
Socket connect_tcp(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout);

void set_nonblocking(const Socket& socket, bool enabled);
void set_nodelay(const Socket& socket);

/// Blocking send of the whole buffer (MSG_NOSIGNAL). Throws
/// Errc::disconnected when the peer is gone.
void send_all(const Socket& socket, std::string_view data);

/// Framed message stream over a connected socket: thread-safe sends, and a
/// single receiving context with a poll-based timeout.
class MessageStream {
public:
    explicit MessageStream(Socket socket);

    const Socket& socket() const { return socket_; }

    void send_payload(std::string_view payload);
    void send(const wire::ControlMessage& msg) { send_payload(wire::serialize_message(msg)); }

    /// Next payload, or std::nullopt on timeout. Throws Errc::disconnected on
    /// EOF and Errc::oversize on a hostile length prefix.
    std::optional<std::string> receive_payload(std::chrono::milliseconds timeout);

    /// receive_payload + wire::parse_message (parse errors propagate).
    std::optional<wire::ControlMessage> receive(std::chrono::milliseconds timeout);

    void shutdown() { socket_.shutdown(); }

private:
    Socket socket_;
    std::mutex send_mutex_;
    wire::EnvelopeDecoder decoder_;
};

} // namespace splatbus::net
