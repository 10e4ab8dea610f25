#include "splatbus/net.hpp"

#include <array>
#include <cerrno>
#include <cstring>
#include <memory>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace splatbus::net {

namespace {

std::string errno_text()
{
    return std::strerror(errno);
}

int remaining_ms(std::chrono::steady_clock::time_point deadline)
{
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

} // namespace

void Socket::close()
{
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::shutdown()
{
    if (fd_ >= 0)
        ::shutdown(fd_, SHUT_RDWR);
}

Socket listen_tcp(const std::string& address, std::uint16_t port, int backlog)
{
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid())
        throw Error(Errc::network_error, "socket: " + errno_text());
    const int one = 1;
    setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1)
        throw Error(Errc::network_error, "invalid bind address " + address);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw Error(Errc::network_error, "bind " + address + ":" + std::to_string(port) + ": " + errno_text());
    if (::listen(s.fd(), backlog) != 0)
        throw Error(Errc::network_error, "listen: " + errno_text());
    return s;
}

std::uint16_t local_port(const Socket& socket)
{
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    if (getsockname(socket.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0)
        throw Error(Errc::network_error, "getsockname: " + errno_text());
    return ntohs(addr.sin_port);
}

void set_nonblocking(const Socket& socket, bool enabled)
{
    const int flags = fcntl(socket.fd(), F_GETFL, 0);
    fcntl(socket.fd(), F_SETFL, enabled ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

void set_nodelay(const Socket& socket)
{
    const int one = 1;
    setsockopt(socket.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Socket connect_tcp(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout)
{
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    if (const int rc = getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &result); rc != 0)
        throw Error(Errc::network_error, "cannot resolve " + host + ": " + gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&freeaddrinfo)> guard(result, freeaddrinfo);

    Socket s(::socket(result->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid())
        throw Error(Errc::network_error, "socket: " + errno_text());
    set_nonblocking(s, true);
    if (::connect(s.fd(), result->ai_addr, result->ai_addrlen) != 0) {
        if (errno != EINPROGRESS)
            throw Error(Errc::network_error,
                        "connect " + host + ":" + std::to_string(port) + ": " + errno_text());
        pollfd pfd{s.fd(), POLLOUT, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (rc <= 0)
            throw Error(Errc::network_error, "connect " + host + ":" + std::to_string(port) + ": timed out");
        int err = 0;
        socklen_t len = sizeof err;
        getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0)
            throw Error(Errc::network_error,
                        "connect " + host + ":" + std::to_string(port) + ": " + std::strerror(err));
    }
    set_nonblocking(s, false);
    set_nodelay(s);
    return s;
}

void send_all(const Socket& socket, std::string_view data)
{
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(socket.fd(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                pollfd pfd{socket.fd(), POLLOUT, 0};
                ::poll(&pfd, 1, 100);
                continue;
            }
            throw Error(Errc::disconnected, "send: " + errno_text());
        }
        sent += static_cast<std::size_t>(n);
    }
}

// ---------------------------------------------------------------------------

MessageStream::MessageStream(Socket socket) : socket_(std::move(socket)) {}

void MessageStream::send_payload(std::string_view payload)
{
    const std::string framed = wire::encode_envelope(payload);
    std::lock_guard lock(send_mutex_);
    send_all(socket_, framed);
}

std::optional<std::string> MessageStream::receive_payload(std::chrono::milliseconds timeout)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::array<std::uint8_t, 65536> buf{};
    for (;;) {
        if (auto payload = decoder_.next())
            return payload;
        pollfd pfd{socket_.fd(), POLLIN, 0};
        const int rc = ::poll(&pfd, 1, remaining_ms(deadline));
        if (rc < 0) {
            if (errno == EINTR)
                continue;
            throw Error(Errc::network_error, "poll: " + errno_text());
        }
        if (rc == 0)
            return std::nullopt;
        const ssize_t n = ::recv(socket_.fd(), buf.data(), buf.size(), 0);
        if (n == 0)
            throw Error(Errc::disconnected, "peer closed the connection");
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN)
                continue;
            throw Error(Errc::disconnected, "recv: " + errno_text());
        }
        decoder_.feed(std::span(buf.data(), static_cast<std::size_t>(n)));
    }
}

std::optional<wire::ControlMessage> MessageStream::receive(std::chrono::milliseconds timeout)
{
    auto payload = receive_payload(timeout);
    if (!payload)
        return std::nullopt;
    return wire::parse_message(*payload);
}

} // namespace splatbus::net
