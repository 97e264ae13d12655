// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace vmsentry {

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
    auto colon = endpoint.rfind(':');
    if (colon == std::string::npos)
        throw std::runtime_error("endpoint must be host:port, got " + endpoint);
    std::string host = endpoint.substr(0, colon);
    int port = std::stoi(endpoint.substr(colon + 1));
    if (port <= 0 || port > 65535)
        throw std::runtime_error("port out of range in " + endpoint);
    return {host.empty() ? "127.0.0.1" : host, static_cast<std::uint16_t>(port)};
}

static bool send_all(int fd, ByteView data) {
    std::size_t off = 0;
    while (off < data.size()) {
        ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n <= 0)
            return false;
        off += static_cast<std::size_t>(n);
    }
    return true;
}

std::vector<ProtocolMessage> TcpServerLink::exchange(const ProtocolMessage& request) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
        throw LinkFailure("socket() failed");

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw LinkFailure("bad address " + host_);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw LinkFailure("connect to " + host_ + ":" + std::to_string(port_) + " failed");
    }

    Bytes frame = encode_frame(request);
    if (!send_all(fd, frame)) {
        ::close(fd);
        throw LinkFailure("send failed");
    }
    ::shutdown(fd, SHUT_WR);

    Bytes buffer;
    std::uint8_t chunk[4096];
    for (;;) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n < 0) {
            ::close(fd);
            throw LinkFailure("recv failed");
        }
        if (n == 0)
            break;
        buffer.insert(buffer.end(), chunk, chunk + n);
    }
    ::close(fd);

    std::vector<ProtocolMessage> responses;
    ByteView rest(buffer);
    while (!rest.empty()) {
        DecodeResult d = decode_frame(rest);
        if (d.error) {
            if (*d.error == FrameError::IncompleteFrame)
                throw LinkFailure("connection closed mid-frame");
            throw LinkFailure(std::string("bad response frame: ") +
                              std::string(frame_error_name(*d.error)));
        }
        responses.push_back(std::move(*d.message));
        rest = rest.subspan(d.consumed);
    }
    return responses;
}

// ---------------------------------------------------------------------------

TcpFrontend::TcpFrontend(SecurityServer& server, const std::string& host, std::uint16_t port)
    : server_(server) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        throw std::runtime_error("bad listen address " + host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw std::runtime_error("bind to " + host + ":" + std::to_string(port) + " failed");
    if (::listen(listen_fd_, 16) != 0)
        throw std::runtime_error("listen failed");

    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpFrontend::~TcpFrontend() {
    stop();
    for (std::thread& t : workers_)
        if (t.joinable())
            t.join();
}

void TcpFrontend::stop() {
    if (!stopping_.exchange(true) && listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

void TcpFrontend::serve_connection(int fd) {
    Bytes buffer;
    std::uint8_t chunk[4096];
    std::optional<ProtocolMessage> request;
    for (;;) {
        DecodeResult d = decode_frame(buffer);
        if (d.message) {
            request = std::move(d.message);
            break;
        }
        if (d.error && *d.error != FrameError::IncompleteFrame)
            break; // malformed or oversize: drop the connection
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0)
            break;
        buffer.insert(buffer.end(), chunk, chunk + n);
    }
    if (request) {
        for (const ProtocolMessage& response : server_.handle(*request))
            if (!send_all(fd, encode_frame(response)))
                break;
    }
    ::close(fd);
}

void TcpFrontend::run() {
    while (!stopping_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (stopping_)
                break;
            continue;
        }
        workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

} // namespace vmsentry
