// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/agent.hpp"
#include "vmsentry/server.hpp"

#include <atomic>
#include <thread>

namespace vmsentry {

// One request per connection: the client sends a single frame, the server
// writes all response frames and closes. Reconnecting per exchange keeps the
// client oblivious to server restarts.
class TcpServerLink : public ServerLink {
public:
    TcpServerLink(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}
    std::vector<ProtocolMessage> exchange(const ProtocolMessage& request) override;

private:
    std::string host_;
    std::uint16_t port_;
};

class TcpFrontend {
public:
    // Binds immediately; throws std::runtime_error on failure.
    TcpFrontend(SecurityServer& server, const std::string& host, std::uint16_t port);
    ~TcpFrontend();

    std::uint16_t port() const { return port_; }
    void run();  // accept loop; returns after stop()
    void stop();

private:
    void serve_connection(int fd);

    SecurityServer& server_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::vector<std::thread> workers_;
};

// "host:port" -> pair; throws std::runtime_error on bad format.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

} // namespace vmsentry
